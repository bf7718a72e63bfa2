//! Renders every preset and reports what the oracle knows about it.

use bcba::camera::Intrinsics;
use bcba::synth::{gt_flow_from_view, ScenePreset, TrajectoryPreset};

fn main() -> bcba::Result<()> {
    let k = Intrinsics::working();
    for preset in ScenePreset::ALL {
        for traj in TrajectoryPreset::ALL {
            let scene = preset.build(traj, 6, k, 0);
            scene.validate()?;
            let p = &scene.trajectory;
            let v0 = scene.render(&p[0], 0);
            let gt = gt_flow_from_view(&scene, &v0, &p[0], &p[2], (0, 2));
            let depths: Vec<f64> = v0.depth.values.iter().zip(v0.valid.iter()).filter(|(_, &v)| v).map(|(d, _)| *d).collect();
            let lo = depths.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = depths.iter().copied().fold(0.0, f64::max);
            println!(
                "{:>12} / {:<16} depth {lo:.2}..{hi:.2} m, flow 0->2 {:.2} px, occluded {}, out of view {}, textureless {}",
                preset.name(),
                traj.name(),
                gt.field.mean_magnitude(),
                gt.occluded.count_true(),
                gt.in_view.iter().filter(|&&v| !v).count(),
                v0.textureless.count_true()
            );
        }
    }
    Ok(())
}
