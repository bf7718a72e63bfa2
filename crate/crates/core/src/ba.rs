//! Damped Gauss-Newton over keyframe poses and per-pixel depths.
//!
//! The normal equations keep a dense pose block, a diagonal depth block and
//! the pose-depth couplings. Depths are eliminated with a Schur complement
//! and recovered by back-substitution. The monocular scale is pinned by a
//! linear constraint on the anchor frame's mean inverse depth.
//!
//! The gradient is exact. For the target frame depths that a geometry
//! residual samples, only the diagonal of their Gauss-Newton block is kept,
//! and only at pixels some flow term observes. The depth block stays
//! diagonal; fixed points are still true stationary points.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Intrinsics;
use crate::error::{Error, Result};
use crate::residuals::{term_coefficients, DepthMap, EdgeGeometry, FlowField, Huber, LinearizedTerm, DEFAULT_TAU};
use crate::se3::{Pose, Twist};

/// Diagonal entries below this are raised to it before damping.
const DAMPING_FLOOR: f64 = 1e-6;
/// Gradient infinity norm treated as stationary.
const GRADIENT_TOL: f64 = 1e-10;
/// Step infinity norm treated as converged.
const STEP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaConfig {
    pub inner_ba_steps: usize,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub lambda_max: f64,
    pub depth_min: f64,
    pub depth_max: f64,
    pub fixed_frames: Vec<usize>,
    /// Pin the mean inverse depth of the anchor frame when only one frame is fixed.
    pub scale_gauge: bool,
    /// Inclusion threshold of the geometry term, pixels.
    pub tau: f64,
    pub huber_delta: f64,
    /// Include the geometry-consistency term.
    pub bi_ba: bool,
}

impl Default for BaConfig {
    fn default() -> Self {
        Self {
            inner_ba_steps: 2,
            lambda_init: 1e-4,
            lambda_up: 10.0,
            lambda_down: 0.5,
            lambda_max: 1e8,
            depth_min: 1e-2,
            depth_max: 1e3,
            fixed_frames: vec![0],
            scale_gauge: true,
            tau: DEFAULT_TAU,
            huber_delta: 1.0,
            bi_ba: true,
        }
    }
}

impl BaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ba: {m}")));
        if self.inner_ba_steps == 0 {
            return bad("inner_ba_steps must be at least 1");
        }
        if !(self.depth_min > 0.0 && self.depth_max > self.depth_min) {
            return bad("depth clamp must satisfy 0 < min < max");
        }
        if !(self.lambda_init > 0.0 && self.lambda_up > 1.0 && self.lambda_down > 0.0 && self.lambda_down < 1.0) {
            return bad("damping schedule must have lambda_init > 0, up > 1, 0 < down < 1");
        }
        if !(self.lambda_max > self.lambda_init) {
            return bad("lambda_max must exceed lambda_init");
        }
        if !(self.tau > 0.0 && self.huber_delta > 0.0) {
            return bad("tau and huber_delta must be positive");
        }
        Ok(())
    }

    fn kernel(&self) -> Huber {
        Huber {
            delta: self.huber_delta,
        }
    }
}

/// Optimization variables: one pose and one depth map per keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct BaState {
    pub poses: Vec<Pose>,
    pub depths: Vec<DepthMap>,
}

impl BaState {
    pub fn new(poses: Vec<Pose>, depths: Vec<DepthMap>) -> Self {
        assert_eq!(poses.len(), depths.len());
        Self { poses, depths }
    }

    pub fn num_frames(&self) -> usize {
        self.poses.len()
    }

    /// Applies `exp(dxi)` on the left of every pose and adds the depth step,
    /// clamping into the configured range.
    pub fn retracted(&self, step: &Step, cfg: &BaConfig) -> BaState {
        let poses = self
            .poses
            .iter()
            .zip(&step.poses)
            .map(|(p, xi)| if xi.0 == Vector6::zeros() { *p } else { p.retract(xi) })
            .collect();
        let depths = self
            .depths
            .iter()
            .zip(&step.depths)
            .map(|(d, dd)| {
                let mut out = d.clone();
                for (v, delta) in out.values.as_mut_slice().iter_mut().zip(dd) {
                    if *delta != 0.0 {
                        *v = (*v + delta).clamp(cfg.depth_min, cfg.depth_max);
                    }
                }
                out
            })
            .collect();
        BaState { poses, depths }
    }

    /// Largest pose or depth difference, for fixed-point checks.
    pub fn max_difference(&self, other: &BaState) -> f64 {
        let pose = self
            .poses
            .iter()
            .zip(&other.poses)
            .map(|(a, b)| (a.rotation - b.rotation).abs().max().max((a.translation - b.translation).abs().max()))
            .fold(0.0, f64::max);
        let depth = self
            .depths
            .iter()
            .zip(&other.depths)
            .flat_map(|(a, b)| a.values.iter().zip(b.values.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        pose.max(depth)
    }
}

/// One directed observation `i -> j`; the flow's confidence grid is omega.
#[derive(Debug, Clone, Copy)]
pub struct BaEdge<'a> {
    pub i: usize,
    pub j: usize,
    pub flow: &'a FlowField,
}

/// Depth rows of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthBlock {
    pub hdd: Vec<f64>,
    /// Part of `hdd` coming from geometry terms that sample this frame.
    pub hdd_sampled: Vec<f64>,
    pub gd: Vec<f64>,
    /// Frames whose pose couples to this frame's depths; `slots[0]` is the frame itself.
    pub slots: Vec<usize>,
    /// `cross[s][p]`: coupling of pixel `p` with the pose of `slots[s]`.
    pub cross: Vec<Vec<Vector6<f64>>>,
}

impl DepthBlock {
    fn new(frame: usize, n: usize) -> Self {
        Self {
            hdd: vec![0.0; n],
            hdd_sampled: vec![0.0; n],
            gd: vec![0.0; n],
            slots: vec![frame],
            cross: vec![vec![Vector6::zeros(); n]],
        }
    }

    fn slot(&mut self, frame: usize) -> usize {
        if let Some(s) = self.slots.iter().position(|&f| f == frame) {
            return s;
        }
        self.slots.push(frame);
        self.cross.push(vec![Vector6::zeros(); self.hdd.len()]);
        self.slots.len() - 1
    }

    /// Pixels with at least one weighted observation.
    #[inline]
    pub fn is_active(&self, p: usize) -> bool {
        self.hdd[p] > 0.0
    }
}

/// Linear constraint `sum_p coeffs[p] * dD[p] = 0` on one frame's depths.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleAnchor {
    pub frame: usize,
    pub coeffs: Vec<f64>,
}

/// Normal equations `H dx = -g` of the combined cost.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub hpp: DMatrix<f64>,
    pub gp: DVector<f64>,
    pub depth: Vec<DepthBlock>,
    pub fixed: Vec<bool>,
    pub anchor: Option<ScaleAnchor>,
    /// Cost at the linearization point.
    pub cost: f64,
}

/// Increments for every frame; fixed frames and inactive pixels stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub poses: Vec<Twist>,
    pub depths: Vec<Vec<f64>>,
}

impl Step {
    pub fn max_abs(&self) -> f64 {
        let p = self.poses.iter().map(|t| t.0.abs().max()).fold(0.0, f64::max);
        let d = self.depths.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max);
        p.max(d)
    }

    pub fn is_finite(&self) -> bool {
        self.poses.iter().all(Twist::is_finite) && self.depths.iter().flatten().all(|x| x.is_finite())
    }
}

#[inline]
fn damp(h: f64, lambda: f64) -> f64 {
    h + lambda * h.max(DAMPING_FLOOR)
}

struct EdgeContribution {
    i: usize,
    j: usize,
    hii: Matrix6<f64>,
    hij: Matrix6<f64>,
    hjj: Matrix6<f64>,
    gi: Vector6<f64>,
    gj: Vector6<f64>,
    hdd: Vec<f64>,
    gd: Vec<f64>,
    ci: Vec<Vector6<f64>>,
    cj: Vec<Vector6<f64>>,
    /// Gradient w.r.t. frame `j` depths through the geometry samples.
    gd_target: Vec<(usize, f64, f64)>,
    cost: f64,
}

impl EdgeContribution {
    fn new(i: usize, j: usize, n: usize) -> Self {
        Self {
            i,
            j,
            hii: Matrix6::zeros(),
            hij: Matrix6::zeros(),
            hjj: Matrix6::zeros(),
            gi: Vector6::zeros(),
            gj: Vector6::zeros(),
            hdd: vec![0.0; n],
            gd: vec![0.0; n],
            ci: vec![Vector6::zeros(); n],
            cj: vec![Vector6::zeros(); n],
            gd_target: Vec::new(),
            cost: 0.0,
        }
    }

    fn add(&mut self, p: usize, t: &LinearizedTerm, coef: f64, kernel: &Huber) {
        if coef == 0.0 {
            return;
        }
        let s = t.r.norm();
        self.cost += coef * kernel.rho(s);
        let w = coef * kernel.weight(s);
        let wai = t.j_pose_i.transpose() * w;
        let waj = t.j_pose_j.transpose() * w;
        self.hii += wai * t.j_pose_i;
        self.hij += wai * t.j_pose_j;
        self.hjj += waj * t.j_pose_j;
        self.gi += wai * t.r;
        self.gj += waj * t.r;
        self.hdd[p] += w * t.j_depth.norm_squared();
        self.gd[p] += w * t.j_depth.dot(&t.r);
        self.ci[p] += wai * t.j_depth;
        self.cj[p] += waj * t.j_depth;
        for &(n, jn) in &t.j_target_depth {
            let g = w * jn.dot(&t.r);
            let h = w * jn.norm_squared();
            if h != 0.0 {
                self.gd_target.push((n, g, h));
            }
        }
    }
}

fn check_edges(state: &BaState, edges: &[BaEdge], k: &Intrinsics) -> Result<()> {
    let n = state.num_frames();
    for e in edges {
        if e.i >= n || e.j >= n || e.i == e.j {
            return Err(Error::Graph(format!("edge ({}, {}) invalid for {n} frames", e.i, e.j)));
        }
        if e.flow.flow.width() != k.width || e.flow.flow.height() != k.height {
            return Err(Error::Graph(format!("flow of edge ({}, {}) has the wrong shape", e.i, e.j)));
        }
    }
    Ok(())
}

fn edge_contribution(state: &BaState, e: &BaEdge, k: &Intrinsics, cfg: &BaConfig) -> EdgeContribution {
    let n = k.num_pixels();
    let kernel = cfg.kernel();
    let geom = EdgeGeometry::new(k, &state.poses[e.i], &state.poses[e.j], &state.depths[e.i], &state.depths[e.j]);
    let mut c = EdgeContribution::new(e.i, e.j, n);
    for p in 0..n {
        let lin = geom.linearize(p, e.flow, cfg.bi_ba);
        let Some(flow) = lin.flow else { continue };
        let in_omega = lin.geo.is_some_and(|g| g.r.norm() < cfg.tau);
        let (cf, cg) = term_coefficients(e.flow.confidence[p], true, in_omega, cfg.bi_ba);
        c.add(p, &flow, cf, &kernel);
        if let Some(g) = lin.geo.filter(|_| in_omega) {
            c.add(p, &g, cg, &kernel);
        }
    }
    c
}

/// Cost of one edge at the given state; the inclusion set is re-evaluated.
pub fn edge_cost(state: &BaState, e: &BaEdge, k: &Intrinsics, cfg: &BaConfig) -> f64 {
    let kernel = cfg.kernel();
    let geom = EdgeGeometry::new(k, &state.poses[e.i], &state.poses[e.j], &state.depths[e.i], &state.depths[e.j]);
    let mut cost = 0.0;
    for p in 0..k.num_pixels() {
        let Some(w) = geom.forward(p) else { continue };
        let sf = geom.flow_error(p, &w, e.flow).norm();
        let sg = if cfg.bi_ba {
            geom.geometry_error(p, &w).map(|g| g.error.norm())
        } else {
            None
        };
        let in_omega = sg.is_some_and(|s| s < cfg.tau);
        let (cf, cg) = term_coefficients(e.flow.confidence[p], true, in_omega, cfg.bi_ba);
        cost += cf * kernel.rho(sf);
        if in_omega {
            cost += cg * kernel.rho(sg.unwrap_or(0.0));
        }
    }
    cost
}

/// Total combined cost over all edges.
pub fn total_cost(state: &BaState, edges: &[BaEdge], k: &Intrinsics, cfg: &BaConfig) -> f64 {
    let per_edge: Vec<f64> = edges.par_iter().map(|e| edge_cost(state, e, k, cfg)).collect();
    per_edge.iter().sum()
}

/// Accumulates `J^T W J` and `J^T W r` over every valid pixel of every edge.
/// Target-depth derivatives enter the gradient only.
pub fn linearize(state: &BaState, edges: &[BaEdge], k: &Intrinsics, cfg: &BaConfig) -> Result<LinearSystem> {
    check_edges(state, edges, k)?;
    let nf = state.num_frames();
    if let Some(&f) = cfg.fixed_frames.iter().find(|&&f| f >= nf) {
        return Err(Error::Config(format!("fixed frame {f} out of range")));
    }
    let n = k.num_pixels();
    let parts: Vec<EdgeContribution> = edges.par_iter().map(|e| edge_contribution(state, e, k, cfg)).collect();

    let mut hpp = DMatrix::zeros(6 * nf, 6 * nf);
    let mut gp = DVector::zeros(6 * nf);
    let mut depth: Vec<DepthBlock> = (0..nf).map(|f| DepthBlock::new(f, n)).collect();
    let mut cost = 0.0;
    for c in &parts {
        let (i, j) = (c.i, c.j);
        let mut add = |a: usize, b: usize, m: &Matrix6<f64>| {
            let mut v = hpp.fixed_view_mut::<6, 6>(6 * a, 6 * b);
            v += m;
        };
        add(i, i, &c.hii);
        add(i, j, &c.hij);
        add(j, i, &c.hij.transpose());
        add(j, j, &c.hjj);
        let mut gi = gp.fixed_rows_mut::<6>(6 * i);
        gi += c.gi;
        let mut gj = gp.fixed_rows_mut::<6>(6 * j);
        gj += c.gj;
        let blk = &mut depth[i];
        let sj = blk.slot(j);
        for p in 0..n {
            if c.hdd[p] == 0.0 && c.gd[p] == 0.0 {
                continue;
            }
            blk.hdd[p] += c.hdd[p];
            blk.gd[p] += c.gd[p];
            blk.cross[0][p] += c.ci[p];
            blk.cross[sj][p] += c.cj[p];
        }
        cost += c.cost;
    }
    // Sampled target depths get their gradient everywhere but curvature only
    // where a flow term already observes them; other pixels are not solved for.
    for c in &parts {
        let blk = &mut depth[c.j];
        for &(p, g, h) in &c.gd_target {
            blk.gd[p] += g;
            if blk.is_active(p) {
                blk.hdd[p] += h;
                blk.hdd_sampled[p] += h;
            }
        }
    }
    if depth.iter().all(|b| b.hdd.iter().all(|&h| h == 0.0)) {
        return Err(Error::EmptySystem);
    }

    let mut fixed = vec![false; nf];
    for &f in &cfg.fixed_frames {
        fixed[f] = true;
    }
    let anchor = (cfg.scale_gauge && cfg.fixed_frames.len() == 1 && nf > 1).then(|| {
        let frame = cfg.fixed_frames[0];
        let coeffs = state.depths[frame]
            .values
            .iter()
            .zip(&depth[frame].hdd)
            .map(|(&d, &h)| if h > 0.0 { 1.0 / (d * d) } else { 0.0 })
            .collect();
        ScaleAnchor { frame, coeffs }
    });
    Ok(LinearSystem {
        hpp,
        gp,
        depth,
        fixed,
        anchor,
        cost,
    })
}

/// Reduced pose system after depth elimination, before the anchor multiplier is removed.
struct Reduced {
    offsets: Vec<Option<usize>>,
    s: DMatrix<f64>,
    rhs: DVector<f64>,
    /// Pose-multiplier column and its diagonal, present when the anchor is active.
    sv: DVector<f64>,
    sigma: f64,
    rhs_nu: f64,
}

impl LinearSystem {
    pub fn num_frames(&self) -> usize {
        self.fixed.len()
    }

    pub fn num_pixels(&self) -> usize {
        self.depth.first().map_or(0, |b| b.hdd.len())
    }

    /// Largest gradient entry over free poses and active depths.
    pub fn gradient_inf_norm(&self) -> f64 {
        let mut m: f64 = 0.0;
        for f in 0..self.num_frames() {
            if !self.fixed[f] {
                m = m.max(self.gp.fixed_rows::<6>(6 * f).abs().max());
            }
        }
        for b in &self.depth {
            m = (0..b.gd.len()).filter(|&p| b.is_active(p)).fold(m, |acc, p| acc.max(b.gd[p].abs()));
        }
        m
    }

    fn offsets(&self) -> (Vec<Option<usize>>, usize) {
        let mut next = 0;
        let off = self
            .fixed
            .iter()
            .map(|&fx| {
                (!fx).then(|| {
                    next += 6;
                    next - 6
                })
            })
            .collect();
        (off, next)
    }

    fn anchor_coeff(&self, f: usize, p: usize) -> f64 {
        match &self.anchor {
            Some(a) if a.frame == f => a.coeffs[p],
            _ => 0.0,
        }
    }

    fn anchor_active(&self, offsets: &[Option<usize>]) -> bool {
        self.anchor.is_some() && offsets.iter().any(Option::is_some)
    }

    fn reduce(&self, lambda: f64) -> Reduced {
        let (offsets, n) = self.offsets();
        let nf = self.num_frames();
        let mut s = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for a in 0..nf {
            let Some(oa) = offsets[a] else { continue };
            for b in 0..nf {
                let Some(ob) = offsets[b] else { continue };
                s.fixed_view_mut::<6, 6>(oa, ob)
                    .copy_from(&self.hpp.fixed_view::<6, 6>(6 * a, 6 * b));
            }
            rhs.fixed_rows_mut::<6>(oa).copy_from(&(-self.gp.fixed_rows::<6>(6 * a)));
        }
        for d in 0..n {
            s[(d, d)] = damp(s[(d, d)], lambda);
        }
        let use_anchor = self.anchor_active(&offsets);
        let mut sv = DVector::zeros(n);
        let mut sigma = 0.0;
        let mut rhs_nu = 0.0;
        for (f, blk) in self.depth.iter().enumerate() {
            let ns = blk.slots.len();
            let mut acc = vec![Matrix6::<f64>::zeros(); ns * ns];
            let mut rhs_acc = vec![Vector6::<f64>::zeros(); ns];
            let mut sv_acc = vec![Vector6::<f64>::zeros(); ns];
            for p in 0..blk.hdd.len() {
                if !blk.is_active(p) {
                    continue;
                }
                let h = damp(blk.hdd[p], lambda);
                let a = if use_anchor { self.anchor_coeff(f, p) } else { 0.0 };
                for si in 0..ns {
                    let cs = blk.cross[si][p];
                    rhs_acc[si] += cs * (blk.gd[p] / h);
                    if a != 0.0 {
                        sv_acc[si] -= cs * (a / h);
                    }
                    let csh = cs / h;
                    for ti in si..ns {
                        acc[si * ns + ti] += csh * blk.cross[ti][p].transpose();
                    }
                }
                if a != 0.0 {
                    sigma += a * a / h;
                    rhs_nu += a * blk.gd[p] / h;
                }
            }
            for si in 0..ns {
                let Some(os) = offsets[blk.slots[si]] else { continue };
                let mut r = rhs.fixed_rows_mut::<6>(os);
                r += rhs_acc[si];
                let mut v = sv.fixed_rows_mut::<6>(os);
                v += sv_acc[si];
                for ti in si..ns {
                    let Some(ot) = offsets[blk.slots[ti]] else { continue };
                    let m = acc[si * ns + ti];
                    let mut st = s.fixed_view_mut::<6, 6>(os, ot);
                    st -= m;
                    if os != ot {
                        let mut ts = s.fixed_view_mut::<6, 6>(ot, os);
                        ts -= m.transpose();
                    }
                }
            }
        }
        Reduced {
            offsets,
            s,
            rhs,
            sv,
            sigma,
            rhs_nu,
        }
    }

    /// Pose-only system matrix after eliminating depths and the scale multiplier.
    pub fn reduced_matrix(&self, lambda: f64) -> DMatrix<f64> {
        let r = self.reduce(lambda);
        if r.sigma > 0.0 {
            &r.s + &r.sv * r.sv.transpose() / r.sigma
        } else {
            r.s
        }
    }

    /// Solves the damped system by eliminating depths first.
    pub fn solve_schur(&self, lambda: f64) -> Result<Step> {
        let r = self.reduce(lambda);
        let n = r.s.nrows();
        let (dx, nu) = if r.sigma > 0.0 {
            let m = &r.s + &r.sv * r.sv.transpose() / r.sigma;
            let b = &r.rhs + &r.sv * (r.rhs_nu / r.sigma);
            let dx = m.cholesky().ok_or(Error::SingularSystem)?.solve(&b);
            let nu = (r.sv.dot(&dx) - r.rhs_nu) / r.sigma;
            (dx, nu)
        } else if n > 0 {
            (r.s.cholesky().ok_or(Error::SingularSystem)?.solve(&r.rhs), 0.0)
        } else {
            (DVector::zeros(0), 0.0)
        };
        let use_anchor = r.sigma > 0.0;
        let nf = self.num_frames();
        let poses = (0..nf)
            .map(|f| match r.offsets[f] {
                Some(o) => Twist(dx.fixed_rows::<6>(o).into_owned()),
                None => Twist::zero(),
            })
            .collect();
        let depths = self
            .depth
            .iter()
            .enumerate()
            .map(|(f, blk)| {
                (0..blk.hdd.len())
                    .map(|p| {
                        if !blk.is_active(p) {
                            return 0.0;
                        }
                        let mut num = -blk.gd[p];
                        for (si, &fs) in blk.slots.iter().enumerate() {
                            if let Some(o) = r.offsets[fs] {
                                num -= blk.cross[si][p].dot(&dx.fixed_rows::<6>(o));
                            }
                        }
                        if use_anchor {
                            num -= self.anchor_coeff(f, p) * nu;
                        }
                        num / damp(blk.hdd[p], lambda)
                    })
                    .collect()
            })
            .collect();
        let step = Step { poses, depths };
        if !step.is_finite() {
            return Err(Error::SingularSystem);
        }
        Ok(step)
    }

    /// Reference solve of the full damped system with a dense LU factorization.
    /// Only practical for small instances.
    pub fn solve_dense(&self, lambda: f64) -> Result<Step> {
        let (offsets, np) = self.offsets();
        let use_anchor = self.anchor_active(&offsets);
        let mut depth_index = Vec::new();
        for (f, blk) in self.depth.iter().enumerate() {
            for p in 0..blk.hdd.len() {
                if blk.is_active(p) {
                    depth_index.push((f, p));
                }
            }
        }
        let nd = depth_index.len();
        let n = np + nd + usize::from(use_anchor);
        let mut m = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        let nf = self.num_frames();
        for a in 0..nf {
            let Some(oa) = offsets[a] else { continue };
            for c in 0..nf {
                let Some(oc) = offsets[c] else { continue };
                m.fixed_view_mut::<6, 6>(oa, oc)
                    .copy_from(&self.hpp.fixed_view::<6, 6>(6 * a, 6 * c));
            }
            b.fixed_rows_mut::<6>(oa).copy_from(&(-self.gp.fixed_rows::<6>(6 * a)));
        }
        for d in 0..np {
            m[(d, d)] = damp(m[(d, d)], lambda);
        }
        for (q, &(f, p)) in depth_index.iter().enumerate() {
            let row = np + q;
            let blk = &self.depth[f];
            m[(row, row)] = damp(blk.hdd[p], lambda);
            b[row] = -blk.gd[p];
            for (si, &fs) in blk.slots.iter().enumerate() {
                if let Some(o) = offsets[fs] {
                    let c = blk.cross[si][p];
                    for k in 0..6 {
                        m[(o + k, row)] += c[k];
                        m[(row, o + k)] += c[k];
                    }
                }
            }
            if use_anchor {
                let a = self.anchor_coeff(f, p);
                m[(n - 1, row)] = a;
                m[(row, n - 1)] = a;
            }
        }
        let x = m.lu().solve(&b).ok_or(Error::SingularSystem)?;
        let poses = (0..nf)
            .map(|f| match offsets[f] {
                Some(o) => Twist(x.fixed_rows::<6>(o).into_owned()),
                None => Twist::zero(),
            })
            .collect();
        let mut depths: Vec<Vec<f64>> = self.depth.iter().map(|b| vec![0.0; b.hdd.len()]).collect();
        for (q, &(f, p)) in depth_index.iter().enumerate() {
            depths[f][p] = x[np + q];
        }
        Ok(Step { poses, depths })
    }
}

/// Per-call record of the damped iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct BaTrace {
    /// Cost before the first step and after every accepted step.
    pub costs: Vec<f64>,
    pub accepted: usize,
    pub rejected: usize,
    pub lambda: f64,
}

impl BaTrace {
    pub fn final_cost(&self) -> f64 {
        self.costs.last().copied().unwrap_or(0.0)
    }
}

/// Runs `cfg.inner_ba_steps` linearize, solve, retract cycles with
/// Levenberg-Marquardt backtracking. Accepted steps never raise the cost.
pub fn ba_iterate(state: &mut BaState, edges: &[BaEdge], k: &Intrinsics, cfg: &BaConfig) -> Result<BaTrace> {
    let mut trace = BaTrace {
        costs: Vec::new(),
        accepted: 0,
        rejected: 0,
        lambda: cfg.lambda_init,
    };
    for _ in 0..cfg.inner_ba_steps {
        let sys = linearize(state, edges, k, cfg)?;
        if trace.costs.is_empty() {
            trace.costs.push(sys.cost);
        }
        if sys.gradient_inf_norm() < GRADIENT_TOL {
            break;
        }
        loop {
            let step = sys.solve_schur(trace.lambda)?;
            if step.max_abs() < STEP_TOL {
                return Ok(trace);
            }
            let candidate = state.retracted(&step, cfg);
            let cost = total_cost(&candidate, edges, k, cfg);
            if cost <= sys.cost {
                *state = candidate;
                trace.costs.push(cost);
                trace.accepted += 1;
                trace.lambda *= cfg.lambda_down;
                break;
            }
            trace.rejected += 1;
            trace.lambda *= cfg.lambda_up;
            if trace.lambda > cfg.lambda_max {
                return Err(Error::MaxDampingExceeded { limit: cfg.lambda_max });
            }
        }
    }
    Ok(trace)
}
