use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{Surface, SynthScene, Texture, TexturedSurface};
use crate::camera::Intrinsics;
use crate::error::Error;
use crate::se3::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenePreset {
    /// Single oblique textured backdrop.
    Plane,
    /// Backdrop plus a floating rectangular card; piecewise planar with occlusion.
    PlaneCard,
    /// Backdrop plus a sphere.
    PlaneSphere,
    /// Sinusoidal height field.
    HeightField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryPreset {
    LateralArc,
    ForwardCorridor,
}

impl ScenePreset {
    pub const ALL: [ScenePreset; 4] = [
        ScenePreset::Plane,
        ScenePreset::PlaneCard,
        ScenePreset::PlaneSphere,
        ScenePreset::HeightField,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenePreset::Plane => "plane",
            ScenePreset::PlaneCard => "plane_card",
            ScenePreset::PlaneSphere => "plane_sphere",
            ScenePreset::HeightField => "height_field",
        }
    }

    pub fn surfaces(self) -> Vec<TexturedSurface> {
        let backdrop = TexturedSurface {
            surface: Surface::plane(
                Vector3::new(0.0, 0.0, 4.0),
                Vector3::new(1.0, 0.0, 0.25),
                Vector3::new(0.0, 1.0, -0.12),
            ),
            texture: Texture::standard(0).with_textureless([0.35, 1.25, -0.8, 0.0]),
        };
        match self {
            ScenePreset::Plane => vec![backdrop],
            ScenePreset::PlaneCard => vec![
                backdrop,
                TexturedSurface {
                    surface: Surface::plane(
                        Vector3::new(-0.45, 0.15, 2.3),
                        Vector3::new(1.0, 0.0, -0.1),
                        Vector3::new(0.0, 1.0, 0.05),
                    )
                    .bounded(0.3, 0.25),
                    texture: Texture::standard(1),
                },
            ],
            ScenePreset::PlaneSphere => vec![
                backdrop,
                TexturedSurface {
                    surface: Surface::Sphere {
                        center: Vector3::new(0.35, -0.05, 2.6),
                        radius: 0.4,
                    },
                    texture: Texture::standard(2),
                },
            ],
            ScenePreset::HeightField => vec![TexturedSurface {
                surface: Surface::HeightField {
                    base: 3.6,
                    amplitude: 0.2,
                    freq: Vector2::new(2.5, 3.0),
                },
                texture: Texture::standard(3).with_textureless([0.3, 1.1, -0.8, 0.0]),
            }],
        }
    }

    pub fn build(self, trajectory: TrajectoryPreset, frames: usize, intrinsics: Intrinsics, seed: u64) -> SynthScene {
        SynthScene::new(
            format!("{}/{}", self.name(), trajectory.name()),
            self.surfaces(),
            trajectory.poses(frames),
            intrinsics,
            seed,
        )
    }
}

/// World-to-camera pose for a camera centered at `c` with yaw and pitch.
fn camera_pose(c: Vector3<f64>, yaw: f64, pitch: f64) -> Pose {
    let r_wc: Matrix3<f64> = *(Rotation3::from_axis_angle(&Vector3::y_axis(), yaw)
        * Rotation3::from_axis_angle(&Vector3::x_axis(), pitch))
    .matrix();
    let r_cw = r_wc.transpose();
    Pose::new(r_cw, -(r_cw * c))
}

impl TrajectoryPreset {
    pub const ALL: [TrajectoryPreset; 2] = [TrajectoryPreset::LateralArc, TrajectoryPreset::ForwardCorridor];

    pub fn name(self) -> &'static str {
        match self {
            TrajectoryPreset::LateralArc => "lateral_arc",
            TrajectoryPreset::ForwardCorridor => "forward_corridor",
        }
    }

    pub fn poses(self, frames: usize) -> Vec<Pose> {
        (0..frames)
            .map(|k| {
                let kf = k as f64;
                match self {
                    TrajectoryPreset::LateralArc => {
                        let s = kf - (frames as f64 - 1.0) / 2.0;
                        let c = Vector3::new(0.12 * s, 0.01 * (1.7 * kf).sin(), 0.03 * (1.0 - (0.5 * s).cos()));
                        camera_pose(c, -0.012 * s, 0.005 * kf.sin())
                    }
                    TrajectoryPreset::ForwardCorridor => {
                        let c = Vector3::new(0.04 * (0.8 * kf).sin(), 0.01 * (1.1 * kf).sin(), 0.1 * kf);
                        camera_pose(c, 0.01 * (0.6 * kf).sin(), 0.004 * (0.9 * kf).cos())
                    }
                }
            })
            .collect()
    }
}

impl fmt::Display for ScenePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for TrajectoryPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenePreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        ScenePreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

impl FromStr for TrajectoryPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        TrajectoryPreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}
