//! Damped Gauss-Newton from perturbed poses and depths with exact flows.

use bcba::ba::{ba_iterate, BaConfig, BaEdge, BaState};
use bcba::camera::Intrinsics;
use bcba::metrics::{ate_rmse, Trajectory};
use bcba::se3::Twist;
use bcba::synth::{gt_flow, ScenePreset, TrajectoryPreset};
use nalgebra::Vector6;

fn main() -> bcba::Result<()> {
    let k = Intrinsics::working();
    let frames = 4;
    let scene = ScenePreset::HeightField.build(TrajectoryPreset::LateralArc, frames, k, 3);
    let gt = scene.trajectory.clone();
    let flows: Vec<_> = (0..frames)
        .flat_map(|i| (0..frames).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| gt_flow(&scene, &gt[i], &gt[j], (i, j)).field)
        .collect();
    let edges: Vec<BaEdge> = flows
        .iter()
        .map(|f| BaEdge {
            i: f.source_id,
            j: f.target_id,
            flow: f,
        })
        .collect();

    let mut state = BaState::new(gt.clone(), scene.gt_depths());
    for (n, p) in state.poses.iter_mut().enumerate().skip(1) {
        let s = 0.01 * n as f64;
        *p = p.retract(&Twist(Vector6::new(s, -s, 0.5 * s, s, 0.0, -s)));
    }
    for d in state.depths.iter_mut() {
        for (i, v) in d.values.as_mut_slice().iter_mut().enumerate() {
            *v *= if i % 2 == 0 { 1.03 } else { 0.97 };
        }
    }
    let gt_traj = Trajectory::uniform(gt, 1.0);
    let cfg = BaConfig::default();
    for outer in 0..5 {
        let trace = ba_iterate(&mut state, &edges, &k, &cfg)?;
        let ate = ate_rmse(&Trajectory::uniform(state.poses.clone(), 1.0), &gt_traj, true)?;
        println!(
            "outer {outer}: cost {:.3e} -> {:.3e}, accepted {} rejected {}, ATE {ate:.2e} m",
            trace.costs[0],
            trace.final_cost(),
            trace.accepted,
            trace.rejected
        );
    }
    Ok(())
}
