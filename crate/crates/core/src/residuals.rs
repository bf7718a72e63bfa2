//! Flow-consistency and symmetric geometry-consistency residuals.
//!
//! For a directed edge `(i, j)` every pixel `u` of frame `i` is lifted with
//! its depth, moved into frame `j` by `T_ji = T_j * T_i^-1` and projected:
//!
//! * the flow residual compares that projection with the predicted
//!   correspondence `u + F(u)`;
//! * the geometry residual samples frame `j`'s depth at the projection,
//!   lifts it again and maps it back through `T_ij`; the distance to `u` is
//!   the residual. Pixels with a geometry residual below `tau` form the
//!   inclusion set.
//!
//! Depth maps are sampled by bilinear interpolation of inverse depth, which
//! is exact on planar surfaces.

use nalgebra::{Matrix2x6, Matrix3x2, Matrix6, Vector2};

use crate::camera::{point_twist_jacobian, project, project_jacobian, transform_project, Intrinsics, Pixel, Warp, Z_MIN};
use crate::grid::{bilinear_support, Grid};
use crate::se3::Pose;

/// Default inclusion threshold for the geometry term, in pixels.
pub const DEFAULT_TAU: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub frame_id: usize,
    pub values: Grid<f64>,
}

/// Largest relative spread of inverse depth across a bilinear support.
pub const DEPTH_EDGE_RATIO: f64 = 0.25;

impl DepthMap {
    pub fn new(frame_id: usize, values: Grid<f64>) -> Self {
        debug_assert!(values.iter().all(|&d| d > 0.0));
        Self { frame_id, values }
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    /// Depth at a continuous location, interpolating inverse depth bilinearly.
    ///
    /// `None` when any of the four neighbors is outside the map, or when
    /// their inverse depths differ by more than [`DEPTH_EDGE_RATIO`]: the
    /// support straddles a depth discontinuity and interpolation is
    /// meaningless there.
    pub fn sample(&self, u: f64, v: f64) -> Option<f64> {
        self.sample_linear(u, v).map(|s| s.depth)
    }

    /// [`DepthMap::sample`] with its derivatives.
    pub fn sample_linear(&self, u: f64, v: f64) -> Option<DepthSample> {
        let (x, y, fx, fy) = bilinear_support(self.width(), self.height(), u, v)?;
        let w = self.width();
        let support = [(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)].map(|(xx, yy)| yy * w + xx);
        let inv = support.map(|i| 1.0 / self.values[i]);
        let [a, b, c, d] = inv;
        let lo = inv.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = inv.iter().copied().fold(0.0, f64::max);
        if hi > lo * (1.0 + DEPTH_EDGE_RATIO) {
            return None;
        }
        let beta = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
        let s: f64 = beta.iter().zip(&inv).map(|(b, i)| b * i).sum();
        if !(s > 0.0) {
            return None;
        }
        let depth = 1.0 / s;
        let ds_du = Vector2::new((1.0 - fy) * (b - a) + fy * (d - c), (1.0 - fx) * (c - a) + fx * (d - b));
        let mut weights = [(0usize, 0.0); 4];
        for n in 0..4 {
            weights[n] = (support[n], beta[n] * inv[n] * inv[n] * depth * depth);
        }
        Some(DepthSample {
            depth,
            gradient: -ds_du * (depth * depth),
            weights,
        })
    }
}

/// Interpolated depth, its gradient in pixel coordinates, and its
/// derivative with respect to each of the four supporting map values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSample {
    pub depth: f64,
    pub gradient: Vector2<f64>,
    pub weights: [(usize, f64); 4],
}

/// Dense correspondence field from `source_id` to `target_id` with confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub source_id: usize,
    pub target_id: usize,
    pub flow: Grid<Vector2<f64>>,
    pub confidence: Grid<f64>,
}

impl FlowField {
    pub fn zeros(source_id: usize, target_id: usize, width: usize, height: usize) -> Self {
        Self {
            source_id,
            target_id,
            flow: Grid::filled(width, height, Vector2::zeros()),
            confidence: Grid::filled(width, height, 1.0),
        }
    }

    pub fn is_well_formed(&self) -> bool {
        self.flow.same_shape(&self.confidence)
            && self.confidence.iter().all(|c| (0.0..=1.0).contains(c))
            && self.flow.iter().all(|f| f.x.is_finite() && f.y.is_finite())
    }

    pub fn mean_magnitude(&self) -> f64 {
        if self.flow.is_empty() {
            return 0.0;
        }
        self.flow.iter().map(|f| f.norm()).sum::<f64>() / self.flow.len() as f64
    }
}

/// Huber kernel on a residual norm, realized through IRLS weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Huber {
    pub delta: f64,
}

impl Default for Huber {
    fn default() -> Self {
        Self { delta: 1.0 }
    }
}

impl Huber {
    pub fn rho(&self, s: f64) -> f64 {
        if s <= self.delta {
            0.5 * s * s
        } else {
            self.delta * (s - 0.5 * self.delta)
        }
    }

    /// `rho'(s) / s`: the weight that turns `rho` into a weighted square.
    pub fn weight(&self, s: f64) -> f64 {
        if s <= self.delta {
            1.0
        } else {
            self.delta / s
        }
    }
}

/// Per-pixel residuals of one directed edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeResiduals {
    pub r_flow: Grid<Vector2<f64>>,
    pub r_geo: Grid<f64>,
    /// Forward projection exists and lands inside frame `j`.
    pub valid: Grid<bool>,
    /// Geometry residual could be evaluated (depth sample inside frame `j`).
    pub geo_valid: Grid<bool>,
    /// Inclusion set: `geo_valid` and `r_geo < tau`.
    pub omega_set: Grid<bool>,
}

impl EdgeResiduals {
    pub fn flow_magnitudes(&self) -> Grid<f64> {
        self.r_flow.map(|r| r.norm())
    }
}

/// Geometric context of one directed edge.
#[derive(Debug, Clone, Copy)]
pub struct EdgeGeometry<'a> {
    pub k: &'a Intrinsics,
    pub t_ji: Pose,
    pub t_ij: Pose,
    pub depth_i: &'a DepthMap,
    pub depth_j: &'a DepthMap,
}

/// Geometry residual at one pixel with the sampled target depth.
#[derive(Debug, Clone, Copy)]
pub struct GeoSample {
    pub error: Vector2<f64>,
    pub target: Pixel,
    pub sampled_depth: f64,
}

/// Residuals and Jacobians of one pixel w.r.t. `(xi_i, xi_j, d_i)`.
#[derive(Debug, Clone, Copy)]
pub struct PixelLinearization {
    pub flow: Option<LinearizedTerm>,
    pub geo: Option<LinearizedTerm>,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearizedTerm {
    pub r: Vector2<f64>,
    pub j_pose_i: Matrix2x6<f64>,
    pub j_pose_j: Matrix2x6<f64>,
    pub j_depth: Vector2<f64>,
    /// Derivatives w.r.t. the target frame depths supporting the sample,
    /// as `(pixel, dr/dD_j)`; zero for the flow term.
    pub j_target_depth: [(usize, Vector2<f64>); 4],
}

impl<'a> EdgeGeometry<'a> {
    pub fn new(
        k: &'a Intrinsics,
        pose_i: &Pose,
        pose_j: &Pose,
        depth_i: &'a DepthMap,
        depth_j: &'a DepthMap,
    ) -> Self {
        let t_ji = pose_j.compose(&pose_i.inverse());
        Self {
            k,
            t_ji,
            t_ij: t_ji.inverse(),
            depth_i,
            depth_j,
        }
    }

    /// Forward warp of pixel `idx`; `None` if behind camera or outside frame `j`.
    #[inline]
    pub fn forward(&self, idx: usize) -> Option<Warp> {
        let u = Pixel::of_index(idx, self.k.width);
        let w = transform_project(&u, self.depth_i.values[idx], &self.t_ji, self.k).ok()?;
        self.k.contains(&w.pixel).then_some(w)
    }

    #[inline]
    pub fn flow_error(&self, idx: usize, warp: &Warp, flow: &FlowField) -> Vector2<f64> {
        let u = Pixel::of_index(idx, self.k.width).to_vector();
        warp.pixel.to_vector() - (u + flow.flow[idx])
    }

    /// Back-projection of the sampled target depth into frame `i`.
    #[inline]
    pub fn geometry_error(&self, idx: usize, warp: &Warp) -> Option<GeoSample> {
        let target = warp.pixel;
        let sampled_depth = self.depth_j.sample(target.u, target.v)?;
        let x_j = self.k.ray(&target) * sampled_depth;
        let back = project(&self.t_ij.transform_point(&x_j), self.k).ok()?;
        let u = Pixel::of_index(idx, self.k.width);
        Some(GeoSample {
            error: back.to_vector() - u.to_vector(),
            target,
            sampled_depth,
        })
    }

    /// Residuals and Jacobians at pixel `idx`. The geometry term follows the
/// sample location through the interpolated target depth; its dependence on
/// the target depth values is reported separately in `j_target_depth`.
    pub fn linearize(&self, idx: usize, flow: &FlowField, with_geo: bool) -> PixelLinearization {
        let Some(warp) = self.forward(idx) else {
            return PixelLinearization {
                flow: None,
                geo: None,
            };
        };
        let ad_ji = self.t_ji.adjoint();
        let j_fwd_i = -(warp.j_pose * ad_ji);
        let flow_term = LinearizedTerm {
            r: self.flow_error(idx, &warp, flow),
            j_pose_i: j_fwd_i,
            j_pose_j: warp.j_pose,
            j_depth: warp.j_depth,
            j_target_depth: [(0, Vector2::zeros()); 4],
        };
        let geo = if with_geo {
            let target = warp.pixel;
            self.depth_j.sample_linear(target.u, target.v).and_then(|smp| {
                let k = self.k;
                let ray = k.ray(&target);
                let p_back = self.t_ij.transform_point(&(ray * smp.depth));
                if p_back.z <= Z_MIN {
                    return None;
                }
                let u = Pixel::of_index(idx, k.width);
                let back = project(&p_back, k).ok()?;
                let jp = project_jacobian(&p_back, k);
                let dx_du = Matrix3x2::new(smp.depth / k.fx, 0.0, 0.0, smp.depth / k.fy, 0.0, 0.0)
                    + ray * smp.gradient.transpose();
                let jr = jp * self.t_ij.rotation;
                let a = jr * dx_du;
                let b = jp * point_twist_jacobian(&p_back);
                let ad_ij: Matrix6<f64> = self.t_ij.adjoint();
                let dr_dd = jr * ray;
                Some(LinearizedTerm {
                    r: back.to_vector() - u.to_vector(),
                    j_pose_i: a * j_fwd_i + b,
                    j_pose_j: a * warp.j_pose - b * ad_ij,
                    j_depth: a * warp.j_depth,
                    j_target_depth: smp.weights.map(|(n, wn)| (n, dr_dd * wn)),
                })
            })
        } else {
            None
        };
        PixelLinearization {
            flow: Some(flow_term),
            geo,
        }
    }
}

/// Flow residual `u_proj - (u + F(u))` over all pixels of frame `i`.
pub fn flow_residual(
    pose_i: &Pose,
    pose_j: &Pose,
    depth_i: &DepthMap,
    flow: &FlowField,
    k: &Intrinsics,
) -> (Grid<Vector2<f64>>, Grid<bool>) {
    let geom = EdgeGeometry::new(k, pose_i, pose_j, depth_i, depth_i);
    let n = k.num_pixels();
    let mut r = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for idx in 0..n {
        match geom.forward(idx) {
            Some(w) => {
                r.push(geom.flow_error(idx, &w, flow));
                valid.push(true);
            }
            None => {
                r.push(Vector2::zeros());
                valid.push(false);
            }
        }
    }
    (Grid::from_vec(k.width, k.height, r), Grid::from_vec(k.width, k.height, valid))
}

/// Geometry residual with its inclusion gate. Returns `(r_geo, geo_valid, omega_set)`.
pub fn geometry_residual(
    pose_i: &Pose,
    pose_j: &Pose,
    depth_i: &DepthMap,
    depth_j: &DepthMap,
    k: &Intrinsics,
    tau: f64,
) -> (Grid<f64>, Grid<bool>, Grid<bool>) {
    let geom = EdgeGeometry::new(k, pose_i, pose_j, depth_i, depth_j);
    let n = k.num_pixels();
    let mut r = vec![0.0; n];
    let mut valid = vec![false; n];
    for idx in 0..n {
        if let Some(g) = geom.forward(idx).and_then(|w| geom.geometry_error(idx, &w)) {
            r[idx] = g.error.norm();
            valid[idx] = true;
        }
    }
    let omega = r.iter().zip(&valid).map(|(&s, &v)| v && s < tau).collect();
    (
        Grid::from_vec(k.width, k.height, r),
        Grid::from_vec(k.width, k.height, valid),
        Grid::from_vec(k.width, k.height, omega),
    )
}

/// Both residuals of one edge in a single pass.
pub fn edge_residuals(
    pose_i: &Pose,
    pose_j: &Pose,
    depth_i: &DepthMap,
    depth_j: &DepthMap,
    flow: &FlowField,
    k: &Intrinsics,
    tau: f64,
) -> EdgeResiduals {
    let geom = EdgeGeometry::new(k, pose_i, pose_j, depth_i, depth_j);
    let n = k.num_pixels();
    let mut r_flow = vec![Vector2::zeros(); n];
    let mut r_geo = vec![0.0; n];
    let mut valid = vec![false; n];
    let mut geo_valid = vec![false; n];
    for idx in 0..n {
        let Some(w) = geom.forward(idx) else { continue };
        valid[idx] = true;
        r_flow[idx] = geom.flow_error(idx, &w, flow);
        if let Some(g) = geom.geometry_error(idx, &w) {
            geo_valid[idx] = true;
            r_geo[idx] = g.error.norm();
        }
    }
    let omega_set = r_geo
        .iter()
        .zip(&geo_valid)
        .map(|(&s, &v)| v && s < tau)
        .collect();
    let (w, h) = (k.width, k.height);
    EdgeResiduals {
        r_flow: Grid::from_vec(w, h, r_flow),
        r_geo: Grid::from_vec(w, h, r_geo),
        valid: Grid::from_vec(w, h, valid),
        geo_valid: Grid::from_vec(w, h, geo_valid),
        omega_set: Grid::from_vec(w, h, omega_set),
    }
}

/// Per-pixel cost and the IRLS weights Gauss-Newton consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedCost {
    pub cost: Grid<f64>,
    pub flow_weight: Grid<f64>,
    pub geo_weight: Grid<f64>,
}

impl CombinedCost {
    pub fn total(&self) -> f64 {
        self.cost.iter().sum()
    }
}

/// Per-pixel coefficients `(flow, geo)` of the combined cost.
///
/// Inside the inclusion set the flow term carries `omega` and the geometry
/// term `1 - omega`; elsewhere on valid pixels only the flow term remains.
#[inline]
pub fn term_coefficients(omega: f64, valid: bool, in_omega_set: bool, use_geo: bool) -> (f64, f64) {
    if !valid {
        (0.0, 0.0)
    } else if use_geo && in_omega_set {
        (omega, 1.0 - omega)
    } else {
        (omega, 0.0)
    }
}

/// Combined cost per pixel: `omega * rho(|r_flow|) + (1 - omega) * rho(r_geo)` on the
/// inclusion set, flow term only on the rest of the valid pixels.
pub fn combined_cost(
    r_flow: &Grid<Vector2<f64>>,
    r_geo: &Grid<f64>,
    omega: &Grid<f64>,
    valid: &Grid<bool>,
    omega_set: &Grid<bool>,
    kernel: &Huber,
) -> CombinedCost {
    let n = r_flow.len();
    let mut cost = vec![0.0; n];
    let mut fw = vec![0.0; n];
    let mut gw = vec![0.0; n];
    for idx in 0..n {
        let (cf, cg) = term_coefficients(omega[idx], valid[idx], omega_set[idx], true);
        let sf = r_flow[idx].norm();
        let sg = r_geo[idx];
        cost[idx] = cf * kernel.rho(sf) + cg * kernel.rho(sg);
        fw[idx] = cf * kernel.weight(sf);
        gw[idx] = cg * kernel.weight(sg);
    }
    let (w, h) = (r_flow.width(), r_flow.height());
    CombinedCost {
        cost: Grid::from_vec(w, h, cost),
        flow_weight: Grid::from_vec(w, h, fw),
        geo_weight: Grid::from_vec(w, h, gw),
    }
}
