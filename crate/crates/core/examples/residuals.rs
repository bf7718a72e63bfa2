//! Flow and geometry residuals of one edge, before and after a depth error.

use bcba::residuals::edge_residuals;
use bcba::synth::{gt_flow, ScenePreset, TrajectoryPreset};
use bcba::camera::Intrinsics;

fn main() {
    let k = Intrinsics::working();
    let scene = ScenePreset::PlaneSphere.build(TrajectoryPreset::LateralArc, 3, k, 0);
    let (pi, pj) = (scene.trajectory[0], scene.trajectory[1]);
    let depths = scene.gt_depths();
    let flow = gt_flow(&scene, &pi, &pj, (0, 1)).field;

    let report = |label: &str, di: &bcba::residuals::DepthMap| {
        let r = edge_residuals(&pi, &pj, di, &depths[1], &flow, &k, 1.0);
        let n = r.valid.count_true();
        let flow_mean = r.r_flow.iter().zip(r.valid.iter()).filter(|(_, &v)| v).map(|(f, _)| f.norm()).sum::<f64>() / n as f64;
        println!(
            "{label}: {n} valid pixels, mean |r_flow| {flow_mean:.4} px, {} in the geometry inclusion set",
            r.omega_set.count_true()
        );
    };
    report("ground truth", &depths[0]);

    let mut scaled = depths[0].clone();
    for v in scaled.values.as_mut_slice() {
        *v *= 1.1;
    }
    report("depth +10%", &scaled);
}
