//! Trajectory and cloud metrics on hand-made inputs.

use bcba::metrics::{ate_rmse, auc, cloud_metrics, default_thresholds, translation_errors, PointCloud, Trajectory};
use bcba::se3::{Pose, Twist};
use nalgebra::{Vector3, Vector6};

fn main() -> bcba::Result<()> {
    let gt: Vec<Pose> = (0..10)
        .map(|i| {
            let a = 0.1 * i as f64;
            Pose::exp(&Twist(Vector6::new(0.0, a, 0.0, a.sin(), 0.0, a.cos())))
        })
        .collect();
    // Same motion at twice the scale plus a small wobble.
    let est: Vec<Pose> = gt
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let c = p.inverse();
            let wobble = Vector3::new(0.0, 0.003 * (i as f64).sin(), 0.0);
            Pose::new(c.rotation, 2.0 * c.translation + wobble).inverse()
        })
        .collect();
    let gt = Trajectory::uniform(gt, 0.1);
    let est = Trajectory::uniform(est, 0.1);
    println!("ATE rigid {:.4} m, with scale {:.5} m", ate_rmse(&est, &gt, false)?, ate_rmse(&est, &gt, true)?);
    let errors = translation_errors(&est, &gt, true, 0.02)?;
    println!("AUC over default thresholds: {:.2}", auc(&errors, &default_thresholds()));

    let grid: Vec<Vector3<f64>> = (0..50)
        .flat_map(|i| (0..50).map(move |j| Vector3::new(0.02 * i as f64, 0.02 * j as f64, 0.0)))
        .collect();
    let plane = PointCloud::new(grid.clone());
    for dz in [0.0, 0.05, 0.1, 1.0] {
        let moved = PointCloud::new(grid.iter().map(|p| p + Vector3::new(0.0, 0.0, dz)).collect());
        let m = cloud_metrics(&moved, &plane, 0.5)?;
        println!("shift {dz:.2} m: accuracy {:.4} completion {:.4} chamfer {:.4}", m.accuracy, m.completion, m.chamfer);
    }
    Ok(())
}
