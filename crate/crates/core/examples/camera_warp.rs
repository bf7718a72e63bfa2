//! Warps one pixel between two views and checks the pose Jacobian numerically.

use bcba::camera::{transform_project, Intrinsics, Pixel};
use bcba::se3::{Pose, Twist};
use nalgebra::{Vector3, Vector6};

fn main() -> bcba::Result<()> {
    let k = Intrinsics::working();
    let t = Pose::exp(&Twist::new(Vector3::new(0.0, 0.05, 0.0), Vector3::new(-0.1, 0.0, 0.02)));
    println!("relative pose: angle {:.4} rad, log {:?}", t.rotation_angle(), t.log().0.as_slice());

    let u = Pixel::new(20.0, 30.0);
    let w = transform_project(&u, 2.5, &t, &k)?;
    println!("pixel ({}, {}) at depth 2.5 -> ({:.4}, {:.4})", u.u, u.v, w.pixel.u, w.pixel.v);
    println!("d pixel / d depth = ({:.5}, {:.5})", w.j_depth.x, w.j_depth.y);

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for c in 0..6 {
        let mut e = Vector6::zeros();
        e[c] = h;
        let plus = transform_project(&u, 2.5, &t.retract(&Twist(e)), &k)?.pixel.to_vector();
        let minus = transform_project(&u, 2.5, &t.retract(&Twist(-e)), &k)?.pixel.to_vector();
        let fd = (plus - minus) / (2.0 * h);
        worst = worst.max((fd - w.j_pose.column(c)).norm());
    }
    println!("largest pose Jacobian column error vs central differences: {worst:.2e}");

    match transform_project(&u, 2.5, &Pose::from_translation(Vector3::new(0.0, 0.0, -3.0)), &k) {
        Ok(_) => println!("unexpected: point behind the camera projected"),
        Err(e) => println!("behind the camera: {e}"),
    }
    Ok(())
}
