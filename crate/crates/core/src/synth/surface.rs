//! Analytic primitives with closed-form (or bracketed) ray intersection.

use nalgebra::{Vector2, Vector3};

/// Ray parameters below this are treated as starting on the surface.
const MIN_RAY_PARAM: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum Surface {
    /// Plane through `origin` spanned by orthonormal `axis_a`, `axis_b`.
    /// Bounded to `|a| <= half_extent.0, |b| <= half_extent.1` when given.
    Plane {
        origin: Vector3<f64>,
        axis_a: Vector3<f64>,
        axis_b: Vector3<f64>,
        half_extent: Option<(f64, f64)>,
    },
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    /// `z = base + amplitude * sin(freq.x * x) * sin(freq.y * y)`, viewed from `z < base`.
    HeightField {
        base: f64,
        amplitude: f64,
        freq: Vector2<f64>,
    },
}

/// Ray/surface hit: ray parameter plus 2D surface coordinates for texturing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    pub t: f64,
    pub coords: Vector2<f64>,
}

impl Surface {
    pub fn plane(origin: Vector3<f64>, axis_a: Vector3<f64>, axis_b: Vector3<f64>) -> Self {
        let a = axis_a.normalize();
        let b = (axis_b - a * a.dot(&axis_b)).normalize();
        Surface::Plane {
            origin,
            axis_a: a,
            axis_b: b,
            half_extent: None,
        }
    }

    pub fn bounded(mut self, half_a: f64, half_b: f64) -> Self {
        if let Surface::Plane { half_extent, .. } = &mut self {
            *half_extent = Some((half_a, half_b));
        }
        self
    }

    /// Nearest intersection with `t > 1e-6` along `origin + t * dir`.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<SurfaceHit> {
        match self {
            Surface::Plane {
                origin: o,
                axis_a,
                axis_b,
                half_extent,
            } => {
                let n = axis_a.cross(axis_b);
                let denom = n.dot(dir);
                if denom.abs() < 1e-14 {
                    return None;
                }
                let t = n.dot(&(o - origin)) / denom;
                if t <= MIN_RAY_PARAM {
                    return None;
                }
                let rel = origin + dir * t - o;
                let coords = Vector2::new(rel.dot(axis_a), rel.dot(axis_b));
                if let Some((ha, hb)) = half_extent {
                    if coords.x.abs() > *ha || coords.y.abs() > *hb {
                        return None;
                    }
                }
                Some(SurfaceHit { t, coords })
            }
            Surface::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.norm_squared();
                let half_b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = half_b * half_b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // Numerically stable pair of roots.
                let q = if half_b > 0.0 { -half_b - sq } else { -half_b + sq };
                let (mut t0, mut t1) = (q / a, c / q);
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                let t = if t0 > MIN_RAY_PARAM {
                    t0
                } else if t1 > MIN_RAY_PARAM {
                    t1
                } else {
                    return None;
                };
                let p = origin + dir * t - center;
                let coords = Vector2::new(
                    radius * p.x.atan2(-p.z),
                    radius * (p.y / radius).clamp(-1.0, 1.0).asin(),
                );
                Some(SurfaceHit { t, coords })
            }
            Surface::HeightField {
                base,
                amplitude,
                freq,
            } => intersect_height_field(origin, dir, *base, *amplitude, freq),
        }
    }
}

fn height(x: f64, y: f64, base: f64, amplitude: f64, freq: &Vector2<f64>) -> f64 {
    base + amplitude * (freq.x * x).sin() * (freq.y * y).sin()
}

/// March to the first sign change of `z(t) - h(x(t), y(t))`, then bisect.
fn intersect_height_field(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    base: f64,
    amplitude: f64,
    freq: &Vector2<f64>,
) -> Option<SurfaceHit> {
    if dir.z <= 0.0 {
        return None;
    }
    let a = amplitude.abs();
    let f = |t: f64| {
        let p = origin + dir * t;
        p.z - height(p.x, p.y, base, amplitude, freq)
    };
    let t_start = ((base - a - origin.z) / dir.z).max(MIN_RAY_PARAM);
    let t_end = (base + a - origin.z) / dir.z;
    if t_end <= MIN_RAY_PARAM {
        return None;
    }
    let steps = 256;
    let dt = (t_end - t_start).max(0.0) / steps as f64;
    let mut lo = t_start;
    if f(lo) >= 0.0 {
        // Camera is already beyond the surface envelope.
        return None;
    }
    let mut hi = None;
    for s in 1..=steps {
        let t = t_start + dt * s as f64;
        let ft = f(t);
        if ft >= 0.0 {
            hi = Some(t);
            break;
        }
        lo = t;
    }
    let mut hi = hi?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let p = origin + dir * t;
    Some(SurfaceHit {
        t,
        coords: Vector2::new(p.x, p.y),
    })
}

/// Sum of oriented sinusoids over surface coordinates, with an optional flat rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    pub waves: Vec<Wave>,
    /// `(a_min, a_max, b_min, b_max)` in surface coordinates.
    pub textureless: Option<[f64; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub amplitude: f64,
    /// Angular frequency in rad/m.
    pub frequency: f64,
    /// Direction angle in radians.
    pub angle: f64,
    pub phase: f64,
}

impl Texture {
    /// Fixed multi-frequency mix; `variant` rotates and re-phases the waves.
    pub fn standard(variant: usize) -> Self {
        let base = [
            (1.0, 9.0, 0.3, 0.0),
            (0.8, 13.7, 1.4, 1.1),
            (0.6, 17.3, 2.5, 2.3),
            (0.5, 7.1, -0.9, 0.7),
            (0.4, 21.9, 0.8, 4.0),
        ];
        let shift = variant as f64 * 0.77;
        Texture {
            waves: base
                .iter()
                .map(|&(amplitude, frequency, angle, phase)| Wave {
                    amplitude,
                    frequency: frequency * 0.7,
                    angle: angle + shift,
                    phase: phase + 2.0 * shift,
                })
                .collect(),
            textureless: None,
        }
    }

    pub fn with_textureless(mut self, rect: [f64; 4]) -> Self {
        self.textureless = Some(rect);
        self
    }

    pub fn is_textureless(&self, c: &Vector2<f64>) -> bool {
        self.textureless
            .is_some_and(|[a0, a1, b0, b1]| c.x >= a0 && c.x <= a1 && c.y >= b0 && c.y <= b1)
    }

    /// Texture gain: 0 inside the flat rectangle, rising smoothly to 1 over
    /// [`FLAT_RIM`] outside it so the boundary does not alias.
    fn gain(&self, c: &Vector2<f64>) -> f64 {
        let Some([a0, a1, b0, b1]) = self.textureless else { return 1.0 };
        let da = (a0 - c.x).max(c.x - a1).max(0.0);
        let db = (b0 - c.y).max(c.y - b1).max(0.0);
        let t = (da.hypot(db) / FLAT_RIM).min(1.0);
        t * t * (3.0 - 2.0 * t)
    }

    pub fn value(&self, c: &Vector2<f64>) -> f64 {
        let gain = self.gain(c);
        if gain == 0.0 {
            return 0.0;
        }
        gain * self.waves
            .iter()
            .map(|w| {
                let (s, co) = w.angle.sin_cos();
                w.amplitude * (w.frequency * (co * c.x + s * c.y) + w.phase).sin()
            })
            .sum::<f64>()
    }
}

/// Width of the transition band around a flat rectangle, surface units.
pub const FLAT_RIM: f64 = 0.3;
