//! Rigid-body transforms on SE(3).
//!
//! A [`Pose`] maps points from a source frame into a target frame,
//! `x_target = R * x_source + t`. Keyframe poses are stored world-to-camera,
//! so the relative transform between keyframes is `T_ji = T_j * T_i^-1`.
//!
//! Tangent vectors are ordered `(omega, v)`: rotation first, translation
//! second. Updates are applied on the left, `T <- exp(xi) * T`.

use nalgebra::{Matrix3, Matrix6, Rotation3, UnitQuaternion, Vector3, Vector6};

/// Below this rotation angle the closed forms switch to Taylor series.
const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric cross-product matrix, `hat(a) * b = a x b`.
#[inline]
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

#[inline]
fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Tangent-space increment `(omega, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist(pub Vector6<f64>);

impl Twist {
    pub fn zero() -> Self {
        Twist(Vector6::zeros())
    }

    pub fn new(omega: Vector3<f64>, v: Vector3<f64>) -> Self {
        Twist(Vector6::new(omega.x, omega.y, omega.z, v.x, v.y, v.z))
    }

    pub fn omega(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn v(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Coefficients `(sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3)`.
fn so3_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta))
    }
}

fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let skew = vee(&(r - r.transpose()));
    if theta < 1e-6 {
        // R - R^T = 2 sin(t) hat(a); sin(t)/t ~ 1 - t^2/6
        return skew * 0.5 * (1.0 + theta * theta / 6.0);
    }
    if theta < std::f64::consts::PI - 1e-2 {
        return skew * (theta / (2.0 * theta.sin()));
    }
    // Near pi: recover the axis from the symmetric part, sign from the skew part.
    let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos_theta;
    let k = (0..3)
        .max_by(|&a, &b| sym[(a, a)].total_cmp(&sym[(b, b)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = sym.column(k).into_owned();
    axis /= axis.norm();
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Rigid transform with an orthonormal rotation matrix and a translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    pub fn exp(xi: &Twist) -> Self {
        let omega = xi.omega();
        let theta = omega.norm();
        let (a, b, c) = so3_coefficients(theta);
        let w = hat(&omega);
        let w2 = w * w;
        let rotation = Matrix3::identity() + w * a + w2 * b;
        let v_mat = Matrix3::identity() + w * b + w2 * c;
        Self {
            rotation,
            translation: v_mat * xi.v(),
        }
    }

    pub fn log(&self) -> Twist {
        let omega = so3_log(&self.rotation);
        let theta = omega.norm();
        let w = hat(&omega);
        let coeff = if theta < 1e-6 {
            1.0 / 12.0 + theta * theta / 720.0
        } else {
            let (a, b, _) = so3_coefficients(theta);
            (1.0 - a / (2.0 * b)) / (theta * theta)
        };
        let v_inv = Matrix3::identity() - w * 0.5 + w * w * coeff;
        Twist::new(omega, v_inv * self.translation)
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// Left-multiplicative retraction `exp(xi) * self`, re-orthonormalized.
    pub fn retract(&self, xi: &Twist) -> Pose {
        let mut p = Pose::exp(xi).compose(self);
        p.rotation = orthonormalize(&p.rotation);
        p
    }

    /// Adjoint in `(omega, v)` ordering: `exp(Ad * xi) = T exp(xi) T^-1`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation;
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(hat(&self.translation) * r));
        ad
    }

    /// Position of the frame origin expressed in the target frame of the
    /// inverse, i.e. the camera center for world-to-camera poses.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn rotation_angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, t: Vector3<f64>) -> Pose {
        Pose::new(*q.to_rotation_matrix().matrix(), t)
    }

    /// Largest deviation of `R^T R` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rotation;
        let e = (r.transpose() * r - Matrix3::identity()).abs().max();
        e.max((r.determinant() - 1.0).abs())
    }

    /// Max-abs distance between the 3x4 matrices of two poses.
    pub fn distance(&self, other: &Pose) -> f64 {
        (self.rotation - other.rotation)
            .abs()
            .max()
            .max((self.translation - other.translation).abs().max())
    }
}

/// One Newton step towards the nearest rotation, `R (3I - R^T R) / 2`.
fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    r * (Matrix3::identity() * 3.0 - r.transpose() * r) * 0.5
}
