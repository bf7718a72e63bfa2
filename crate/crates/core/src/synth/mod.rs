//! Analytic ground-truth world: scenes, trajectories, exact depth and flow.
//!
//! Depth is z-depth throughout. Camera frames follow the usual vision
//! convention (x right, y down, z forward) and poses are world-to-camera.

mod corrupt;
mod presets;
mod surface;

pub use corrupt::{corrupt_depth, corrupt_flow, render_features, CorruptionSpec, Patch};
pub use presets::{ScenePreset, TrajectoryPreset};
pub use surface::{Surface, SurfaceHit, Texture, Wave};

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::{project, Intrinsics, Pixel};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::residuals::{DepthMap, FlowField};
use crate::se3::Pose;

/// Occlusion z-buffer tolerance in meters.
pub const OCCLUSION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TexturedSurface {
    pub surface: Surface,
    pub texture: Texture,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub name: String,
    pub surfaces: Vec<TexturedSurface>,
    pub trajectory: Vec<Pose>,
    pub intrinsics: Intrinsics,
    pub seed: u64,
}

/// Nearest surface along a world ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneHit {
    pub surface: usize,
    pub hit: SurfaceHit,
}

/// Everything one camera sees, rendered per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub depth: DepthMap,
    pub valid: Grid<bool>,
    pub surface: Grid<Option<usize>>,
    pub intensity: Grid<f64>,
    pub textureless: Grid<bool>,
}

/// Ground-truth flow of one directed pair plus visibility information.
#[derive(Debug, Clone, PartialEq)]
pub struct GtFlow {
    pub field: FlowField,
    /// The 3D point is hidden behind another surface in the target view.
    pub occluded: Grid<bool>,
    /// The projection lands inside the target image.
    pub in_view: Grid<bool>,
    /// For occluded pixels: the flow of the occluding point seen at the same target.
    pub occluder_flow: Grid<Vector2<f64>>,
}

impl SynthScene {
    pub fn new(name: impl Into<String>, surfaces: Vec<TexturedSurface>, trajectory: Vec<Pose>, intrinsics: Intrinsics, seed: u64) -> Self {
        Self {
            name: name.into(),
            surfaces,
            trajectory,
            intrinsics,
            seed,
        }
    }

    /// Nearest hit of `origin + t * dir` over all surfaces.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<SceneHit> {
        self.surfaces
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.surface.intersect(origin, dir).map(|hit| SceneHit { surface: i, hit }))
            .min_by(|a, b| a.hit.t.total_cmp(&b.hit.t))
    }

    /// Cast the camera ray through `pixel`; the hit parameter is the z-depth.
    pub fn cast_pixel(&self, pose: &Pose, pixel: &Pixel) -> Option<SceneHit> {
        let dir = pose.rotation.transpose() * self.intrinsics.ray(pixel);
        self.cast(&pose.center(), &dir)
    }

    pub fn render(&self, pose: &Pose, frame_id: usize) -> RenderedView {
        let k = self.intrinsics;
        let hits: Vec<Option<SceneHit>> = (0..k.num_pixels())
            .into_par_iter()
            .map(|idx| self.cast_pixel(pose, &Pixel::of_index(idx, k.width)))
            .collect();
        let (w, h) = (k.width, k.height);
        let grid = |f: &dyn Fn(&Option<SceneHit>) -> f64| Grid::from_vec(w, h, hits.iter().map(f).collect());
        let depth = grid(&|hit| hit.map_or(1.0, |s| s.hit.t));
        let intensity = grid(&|hit| hit.map_or(0.0, |s| self.surfaces[s.surface].texture.value(&s.hit.coords)));
        RenderedView {
            depth: DepthMap::new(frame_id, depth),
            valid: Grid::from_vec(w, h, hits.iter().map(Option::is_some).collect()),
            surface: Grid::from_vec(w, h, hits.iter().map(|s| s.map(|s| s.surface)).collect()),
            intensity,
            textureless: Grid::from_vec(
                w,
                h,
                hits.iter()
                    .map(|s| s.is_some_and(|s| self.surfaces[s.surface].texture.is_textureless(&s.hit.coords)))
                    .collect(),
            ),
        }
    }

    /// Checks the scene invariants: every camera sees at least half the
    /// image on one surface and all depths lie in `[0.1, 100]` m.
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.trajectory.is_empty() {
            return Err(Error::Config(format!("scene '{}' has an empty trajectory", self.name)));
        }
        for (f, pose) in self.trajectory.iter().enumerate() {
            let view = self.render(pose, f);
            let n = view.valid.len();
            let best = (0..self.surfaces.len())
                .map(|s| view.surface.iter().filter(|&&x| x == Some(s)).count())
                .max()
                .unwrap_or(0);
            if 2 * best < n {
                return Err(Error::Config(format!("frame {f} sees no surface over half the image")));
            }
            let bad = view
                .depth
                .values
                .iter()
                .zip(view.valid.iter())
                .any(|(&d, &v)| v && !(0.1..=100.0).contains(&d));
            if bad {
                return Err(Error::Config(format!("frame {f} has depths outside [0.1, 100] m")));
            }
        }
        Ok(())
    }

    pub fn gt_depths(&self) -> Vec<DepthMap> {
        self.trajectory
            .iter()
            .enumerate()
            .map(|(f, p)| self.render(p, f).depth)
            .collect()
    }
}

/// Ground-truth depth and validity for one pose.
pub fn render_depth(scene: &SynthScene, pose: &Pose) -> (DepthMap, Grid<bool>) {
    let view = scene.render(pose, 0);
    (view.depth, view.valid)
}

/// Exact flow `pi(T_ji pi^-1(u, D_i(u))) - u` with a z-buffer occlusion test.
pub fn gt_flow(scene: &SynthScene, pose_i: &Pose, pose_j: &Pose, ids: (usize, usize)) -> GtFlow {
    let view_i = scene.render(pose_i, ids.0);
    gt_flow_from_view(scene, &view_i, pose_i, pose_j, ids)
}

/// [`gt_flow`] reusing an already rendered source view.
pub fn gt_flow_from_view(scene: &SynthScene, view_i: &RenderedView, pose_i: &Pose, pose_j: &Pose, ids: (usize, usize)) -> GtFlow {
    let k = scene.intrinsics;
    let t_ji = pose_j.compose(&pose_i.inverse());
    let t_ij = t_ji.inverse();
    let center_j = pose_j.center();
    let rows: Vec<(Vector2<f64>, bool, bool, Vector2<f64>)> = (0..k.num_pixels())
        .into_par_iter()
        .map(|idx| {
            let zero = Vector2::zeros();
            if !view_i.valid[idx] {
                return (zero, false, false, zero);
            }
            let u = Pixel::of_index(idx, k.width);
            let x_i = k.ray(&u) * view_i.depth.values[idx];
            let x_j = t_ji.transform_point(&x_i);
            let Ok(target) = project(&x_j, &k) else {
                return (zero, false, false, zero);
            };
            let flow = target.to_vector() - u.to_vector();
            let in_view = k.contains(&target);
            // Re-cast from camera j towards the point; a nearer hit occludes it.
            let ray_c = x_j / x_j.z;
            let dir = pose_j.rotation.transpose() * ray_c;
            let (occluded, occ_flow) = match scene.cast(&center_j, &dir) {
                Some(h) if h.hit.t < x_j.z - OCCLUSION_TOLERANCE => {
                    let occ_i = t_ij.transform_point(&(ray_c * h.hit.t));
                    let f = project(&occ_i, &k)
                        .map(|p| target.to_vector() - p.to_vector())
                        .unwrap_or(flow);
                    (true, f)
                }
                _ => (false, flow),
            };
            (flow, occluded, in_view, occ_flow)
        })
        .collect();
    let (w, h) = (k.width, k.height);
    let mut field = FlowField::zeros(ids.0, ids.1, w, h);
    field.flow = Grid::from_vec(w, h, rows.iter().map(|r| r.0).collect());
    GtFlow {
        field,
        occluded: Grid::from_vec(w, h, rows.iter().map(|r| r.1).collect()),
        in_view: Grid::from_vec(w, h, rows.iter().map(|r| r.2).collect()),
        occluder_flow: Grid::from_vec(w, h, rows.iter().map(|r| r.3).collect()),
    }
}

/// Pixels whose bilinear depth support in the target view lies entirely on
/// the surface that the source pixel sees. Elsewhere interpolation mixes
/// surfaces across a depth edge.
pub fn uniform_support(view_i: &RenderedView, view_j: &RenderedView, gt: &GtFlow) -> Grid<bool> {
    let (w, h) = (view_i.valid.width(), view_i.valid.height());
    Grid::from_fn(w, h, |x, y| {
        let idx = y * w + x;
        let Some(s) = view_i.surface[idx] else { return false };
        if !gt.in_view[idx] {
            return false;
        }
        let target = Vector2::new(x as f64, y as f64) + gt.field.flow[idx];
        let Some((x0, y0, _, _)) = crate::grid::bilinear_support(w, h, target.x, target.y) else {
            return false;
        };
        [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)]
            .iter()
            .all(|&(a, b)| *view_j.surface.get(a, b) == Some(s))
    })
}
