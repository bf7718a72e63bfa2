//! Pinhole projection and back-projection with analytic Jacobians.

use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, Matrix3x6, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{hat, Pose};

/// Cheirality cutoff in meters; points at or below it are not projected.
pub const Z_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid intrinsics {self:?}")))
        }
    }

    /// 64x48 working resolution with the principal point at the image center.
    pub fn working() -> Self {
        Self {
            fx: 50.0,
            fy: 50.0,
            cx: 31.5,
            cy: 23.5,
            width: 64,
            height: 48,
        }
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// True when the pixel lies inside `[0, w-1] x [0, h-1]`.
    #[inline]
    pub fn contains(&self, p: &Pixel) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u <= (self.width - 1) as f64 && p.v <= (self.height - 1) as f64
    }

    /// Unit-depth ray through a pixel.
    #[inline]
    pub fn ray(&self, p: &Pixel) -> Vector3<f64> {
        Vector3::new((p.u - self.cx) / self.fx, (p.v - self.cy) / self.fy, 1.0)
    }
}

/// Continuous pixel coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    #[inline]
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    #[inline]
    pub fn of_index(idx: usize, width: usize) -> Self {
        Self::new((idx % width) as f64, (idx / width) as f64)
    }

    #[inline]
    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }

    #[inline]
    pub fn from_vector(v: &Vector2<f64>) -> Self {
        Self::new(v.x, v.y)
    }
}

#[inline]
pub fn project(x: &Vector3<f64>, k: &Intrinsics) -> Result<Pixel> {
    if !(x.z > Z_MIN) {
        return Err(Error::DepthBehindCamera { z: x.z });
    }
    Ok(Pixel::new(k.fx * x.x / x.z + k.cx, k.fy * x.y / x.z + k.cy))
}

#[inline]
pub fn backproject(p: &Pixel, depth: f64, k: &Intrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    Ok(k.ray(p) * depth)
}

/// d(pi)/d(x) for a camera-frame point with positive depth.
#[inline]
pub fn project_jacobian(x: &Vector3<f64>, k: &Intrinsics) -> Matrix2x3<f64> {
    let iz = 1.0 / x.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * x.x * iz2,
        0.0,
        k.fy * iz,
        -k.fy * x.y * iz2,
    )
}

/// d(T x)/d(xi) for a left perturbation `exp(xi) T`, evaluated at `p = T x`.
#[inline]
pub fn point_twist_jacobian(p: &Vector3<f64>) -> Matrix3x6<f64> {
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-hat(p)));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    j
}

/// Result of warping one pixel through a relative pose.
#[derive(Debug, Clone, Copy)]
pub struct Warp {
    pub pixel: Pixel,
    /// Point in the target camera frame.
    pub point: Vector3<f64>,
    /// d(pixel)/d(xi) for `T <- exp(xi) T`.
    pub j_pose: Matrix2x6<f64>,
    /// d(pixel)/d(depth).
    pub j_depth: Vector2<f64>,
}

/// `pi(T * pi^-1(u, d))` with Jacobians w.r.t. the left twist of `T` and `d`.
pub fn transform_project(u: &Pixel, depth: f64, t: &Pose, k: &Intrinsics) -> Result<Warp> {
    let ray = k.ray(u);
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    let point = t.transform_point(&(ray * depth));
    let pixel = project(&point, k)?;
    let jp = project_jacobian(&point, k);
    Ok(Warp {
        pixel,
        point,
        j_pose: jp * point_twist_jacobian(&point),
        j_depth: jp * (t.rotation * ray),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::Twist;
    use nalgebra::Vector6;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k100() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    #[test]
    fn principal_axis_projects_to_principal_point() {
        assert_eq!(project(&Vector3::new(0.0, 0.0, 1.0), &k100()).unwrap(), Pixel::new(50.0, 50.0));
        let p = project(&Vector3::new(1.0, 0.0, 2.0), &k100()).unwrap();
        assert_eq!(p.u, 100.0);
    }

    #[test]
    fn singular_depths_are_rejected() {
        assert!(matches!(
            project(&Vector3::new(0.0, 0.0, 0.0), &k100()),
            Err(Error::DepthBehindCamera { .. })
        ));
        assert!(matches!(
            backproject(&Pixel::new(3.0, 4.0), 0.0, &k100()),
            Err(Error::NonPositiveDepth(_))
        ));
        assert_eq!(
            backproject(&Pixel::new(50.0, 50.0), 1.0, &k100()).unwrap(),
            Vector3::new(0.0, 0.0, 1.0)
        );
    }

    #[test]
    fn identity_warp_is_fixed() {
        let k = k100();
        let w = transform_project(&Pixel::new(12.5, 70.25), 3.0, &Pose::identity(), &k).unwrap();
        assert!((w.pixel.u - 12.5).abs() < 1e-12 && (w.pixel.v - 70.25).abs() < 1e-12);
        assert!(w.j_depth.norm() < 1e-12);
    }

    #[test]
    fn forward_translation_shrinks_offset() {
        let k = k100();
        let (d, t) = (2.0, 0.5);
        let u = Pixel::new(80.0, 30.0);
        let w = transform_project(&u, d, &Pose::from_translation(Vector3::new(0.0, 0.0, t)), &k).unwrap();
        let s = d / (d + t);
        assert!((w.pixel.u - (50.0 + 30.0 * s)).abs() < 1e-12);
        assert!((w.pixel.v - (50.0 - 20.0 * s)).abs() < 1e-12);
    }

    #[test]
    fn backproject_round_trip() {
        let k = Intrinsics::working();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let u = Pixel::new(rng.random_range(-10.0..80.0), rng.random_range(-10.0..60.0));
            let d = rng.random_range(0.1..100.0);
            let x = backproject(&u, d, &k).unwrap();
            let back = project(&x, &k).unwrap();
            assert!((back.u - u.u).abs() < 1e-9 && (back.v - u.v).abs() < 1e-9);
        }
    }

    #[test]
    fn warp_jacobians_match_central_differences() {
        let k = Intrinsics::working();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        let mut checked = 0;
        while checked < 500 {
            let xi = Twist(Vector6::from_fn(|i, _| {
                if i < 3 {
                    rng.random_range(-0.3..0.3)
                } else {
                    rng.random_range(-0.5..0.5)
                }
            }));
            let t = Pose::exp(&xi);
            let u = Pixel::new(rng.random_range(0.0..63.0), rng.random_range(0.0..47.0));
            let d = rng.random_range(0.5..20.0);
            let Ok(w) = transform_project(&u, d, &t, &k) else { continue };
            if w.point.z < 0.2 {
                continue;
            }
            for c in 0..6 {
                let mut e = Vector6::zeros();
                e[c] = h;
                let plus = transform_project(&u, d, &t.retract(&Twist(e)), &k).unwrap();
                let minus = transform_project(&u, d, &t.retract(&Twist(-e)), &k).unwrap();
                let fd = (plus.pixel.to_vector() - minus.pixel.to_vector()) / (2.0 * h);
                let an = w.j_pose.column(c);
                assert!((fd - an).norm() <= 1e-4 * an.norm().max(1.0));
            }
            checked += 1;
        }
    }
}
