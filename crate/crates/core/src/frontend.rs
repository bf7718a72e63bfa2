//! Deterministic flow refinement driven by a masked local correlation volume.
//!
//! Reliable pixels follow the sub-pixel correlation peak around the current
//! flow target. Unreliable pixels have their correlation zeroed and take the
//! flow induced by the geometry prior and the current poses instead.

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{transform_project, Intrinsics, Pixel};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::residuals::{DepthMap, FlowField};
use crate::se3::Pose;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    /// Correlation search radius, pixels.
    pub radius: usize,
    /// Half side of the matching patch, pixels.
    pub patch_radius: usize,
    /// Largest flow update per iteration in reliable regions, pixels.
    pub step_cap: f64,
    /// Fraction of the way unreliable flows move toward the geometry prior.
    pub blend: f64,
    /// A displaced peak must beat the current target's score by this much
    /// to move the flow.
    pub min_gain: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            radius: 3,
            patch_radius: 2,
            step_cap: 3.0,
            blend: 1.0,
            min_gain: 0.05,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radius == 0 {
            return Err(Error::Config("frontend: radius must be at least 1".into()));
        }
        if !(self.step_cap > 0.0) {
            return Err(Error::Config("frontend: step_cap must be positive".into()));
        }
        if !(self.min_gain >= 0.0) {
            return Err(Error::Config("frontend: min_gain must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.blend) {
            return Err(Error::Config("frontend: blend must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Depth prior of one frame and the size of its multiplicative error.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryPrior {
    pub depth: DepthMap,
    pub noise_fraction: f64,
}

/// Scores of every pixel over a `(2r+1)^2` displacement window centered at
/// the current flow target. Out-of-image targets score `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationVolume {
    pub radius: usize,
    pub width: usize,
    pub height: usize,
    scores: Vec<f64>,
}

impl CorrelationVolume {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn window(&self, idx: usize) -> &[f64] {
        let n = self.side() * self.side();
        &self.scores[idx * n..(idx + 1) * n]
    }

    pub fn score(&self, idx: usize, dx: isize, dy: isize) -> f64 {
        let r = self.radius as isize;
        let side = self.side() as isize;
        self.window(idx)[((dy + r) * side + dx + r) as usize]
    }

    fn offset(&self, k: usize) -> (isize, isize) {
        let side = self.side();
        let r = self.radius as isize;
        ((k % side) as isize - r, (k / side) as isize - r)
    }

    /// Builds a volume from explicit windows, e.g. for tests.
    pub fn from_windows(radius: usize, width: usize, height: usize, scores: Vec<f64>) -> Self {
        assert_eq!(scores.len(), width * height * (2 * radius + 1).pow(2));
        Self {
            radius,
            width,
            height,
            scores,
        }
    }
}

/// Patches with a standard deviation below this are flat.
pub const FLAT_STD: f64 = 3e-2;

/// Zero-mean, unit-norm vector; `None` when flat.
fn normalize(mut p: Vec<f64>) -> Option<Vec<f64>> {
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    p.iter_mut().for_each(|x| *x -= mean);
    let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < FLAT_STD * (p.len() as f64).sqrt() {
        return None;
    }
    p.iter_mut().for_each(|x| *x /= norm);
    Some(p)
}

/// Normalized cross-correlation of patches around `u` in `feat_i` and
/// `u + F(u) + delta` in `feat_j`. Only patch samples inside both images at
/// the current target enter the comparison, and every displacement is scored
/// on that same set; a displacement that would push one of them outside
/// scores like an out-of-bounds target. Windows whose set covers less than
/// half the patch carry no information and score 0.
pub fn correlation_volume(
    feat_i: &Grid<f64>,
    feat_j: &Grid<f64>,
    flow: &FlowField,
    radius: usize,
    patch_radius: usize,
) -> CorrelationVolume {
    let (w, h) = (feat_i.width(), feat_i.height());
    let (wf, hf) = ((w - 1) as f64, (h - 1) as f64);
    let inside = move |x: f64, y: f64| x >= 0.0 && y >= 0.0 && x <= wf && y <= hf;
    let side = 2 * radius + 1;
    let pr = patch_radius as isize;
    let offsets: Vec<(isize, isize)> = (-pr..=pr).flat_map(|dy| (-pr..=pr).map(move |dx| (dx, dy))).collect();
    let offsets = &offsets;
    // Every sample of one pixel shares the fractional part of its target, so
    // the window is scored from one interpolated tile.
    let reach = (radius + patch_radius) as isize;
    let tside = 2 * reach as usize + 1;
    let scores: Vec<f64> = (0..w * h)
        .into_par_iter()
        .flat_map_iter(|idx| {
            let (xi, yi) = ((idx % w) as isize, (idx / w) as isize);
            let c = Vector2::new(xi as f64, yi as f64) + flow.flow[idx];
            // NaN marks samples outside the image.
            let tile: Vec<f64> = (0..tside * tside)
                .map(|t| {
                    let ox = (t % tside) as isize - reach;
                    let oy = (t / tside) as isize - reach;
                    feat_j.sample_bilinear(c.x + ox as f64, c.y + oy as f64).unwrap_or(f64::NAN)
                })
                .collect();
            let support: Vec<(isize, isize)> = offsets
                .iter()
                .copied()
                .filter(|&(ox, oy)| {
                    inside((xi + ox) as f64, (yi + oy) as f64) && inside(c.x + ox as f64, c.y + oy as f64)
                })
                .collect();
            let informative = 2 * support.len() >= offsets.len();
            let a = normalize(
                support
                    .iter()
                    .map(|&(ox, oy)| *feat_i.get((xi + ox) as usize, (yi + oy) as usize))
                    .collect(),
            );
            let n = support.len() as f64;
            let stride = tside as isize;
            let taps: Vec<isize> = support.iter().map(|&(ox, oy)| oy * stride + ox).collect();
            let a_or_zero = a.clone().unwrap_or_else(|| vec![0.0; taps.len()]);
            (0..side * side).map(move |k| {
                let dx = (k % side) as isize - radius as isize;
                let dy = (k / side) as isize - radius as isize;
                let base = (dy + reach) * stride + dx + reach;
                if tile[base as usize].is_nan() {
                    return f64::NEG_INFINITY;
                }
                // `a` is zero-mean, so the dot product needs no centering of `b`.
                // NaN samples propagate into `sum`.
                let (mut sum, mut sq, mut dot) = (0.0, 0.0, 0.0);
                for (&t, &av) in taps.iter().zip(&a_or_zero) {
                    let v = tile[(base + t) as usize];
                    sum += v;
                    sq += v * v;
                    dot += av * v;
                }
                if sum.is_nan() {
                    return f64::NEG_INFINITY;
                }
                if !informative {
                    return 0.0;
                }
                let var = (sq - sum * sum / n).max(0.0);
                match &a {
                    Some(_) if var >= FLAT_STD * FLAT_STD * n => dot / var.sqrt(),
                    _ => 0.0,
                }
            })
        })
        .collect();
    CorrelationVolume {
        radius,
        width: w,
        height: h,
        scores,
    }
}

/// `corr * m`: windows of unreliable pixels become all zero.
pub fn apply_mask(corr: &CorrelationVolume, m: &Grid<bool>) -> CorrelationVolume {
    let n = corr.side() * corr.side();
    let mut out = corr.clone();
    for (idx, chunk) in out.scores.chunks_mut(n).enumerate() {
        if !m[idx] {
            chunk.fill(0.0);
        }
    }
    out
}

/// Discrete window peak. Ties go to the smallest displacement, so a flat
/// window peaks at zero.
fn peak(win: &[f64], corr: &CorrelationVolume) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64, isize)> = None;
    for (k, &s) in win.iter().enumerate() {
        if s == f64::NEG_INFINITY {
            continue;
        }
        let (dx, dy) = corr.offset(k);
        let d2 = dx * dx + dy * dy;
        let better = match best {
            None => true,
            Some((_, bs, bd)) => s > bs || (s == bs && d2 < bd),
        };
        if better {
            best = Some((k, s, d2));
        }
    }
    best.map(|(k, s, _)| (k, s))
}

/// Parabola vertex through three samples, clamped to half a pixel.
fn parabola(lo: f64, mid: f64, hi: f64) -> f64 {
    let denom = lo - 2.0 * mid + hi;
    if !(lo.is_finite() && hi.is_finite()) || denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (lo - hi) / denom).clamp(-0.5, 0.5)
}

/// Sub-pixel peak displacement of one window; zero when the peak is central,
/// not clearly better than the current target, or the target is off-image.
fn peak_offset(corr: &CorrelationVolume, idx: usize, step_cap: f64, min_gain: f64) -> Vector2<f64> {
    let win = corr.window(idx);
    let Some((k, s)) = peak(win, corr) else {
        return Vector2::zeros();
    };
    let (dx, dy) = corr.offset(k);
    let center = corr.score(idx, 0, 0);
    // A target outside the image has nothing to compare against.
    if (dx == 0 && dy == 0) || center == f64::NEG_INFINITY || s - center < min_gain {
        return Vector2::zeros();
    }
    let r = corr.radius as isize;
    let at = |x: isize, y: isize| {
        if x.abs() > r || y.abs() > r {
            f64::NEG_INFINITY
        } else {
            corr.score(idx, x, y)
        }
    };
    let d = Vector2::new(
        dx as f64 + parabola(at(dx - 1, dy), s, at(dx + 1, dy)),
        dy as f64 + parabola(at(dx, dy - 1), s, at(dx, dy + 1)),
    );
    let n = d.norm();
    if n > step_cap {
        d * (step_cap / n)
    } else {
        d
    }
}

/// Flow induced by a depth prior: `pi(T_ji pi^-1(u, D(u))) - u`.
/// Confidence is `0.5 * (1 - noise)` on valid pixels; pixels failing the
/// cheirality test are invalid with zero flow and confidence.
pub fn geometry_prior_flow(
    prior: &GeometryPrior,
    target_id: usize,
    t_ji: &Pose,
    k: &Intrinsics,
) -> (FlowField, Grid<bool>) {
    let conf = 0.5 * (1.0 - prior.noise_fraction.clamp(0.0, 1.0));
    let (w, h) = (k.width, k.height);
    let mut out = FlowField::zeros(prior.depth.frame_id, target_id, w, h);
    let mut valid = Grid::filled(w, h, false);
    for idx in 0..w * h {
        let u = Pixel::of_index(idx, w);
        match transform_project(&u, prior.depth.values[idx], t_ji, k) {
            Ok(wp) => {
                out.flow[idx] = wp.pixel.to_vector() - u.to_vector();
                out.confidence[idx] = conf;
                valid[idx] = true;
            }
            Err(_) => out.confidence[idx] = 0.0,
        }
    }
    (out, valid)
}

/// One refinement step. `corr` must already be masked; where `m` is false
/// the window is ignored and the flow moves toward the prior.
pub fn refine_flow(
    corr: &CorrelationVolume,
    m: &Grid<bool>,
    prior: &FlowField,
    prior_valid: &Grid<bool>,
    flow: &FlowField,
    cfg: &FrontendConfig,
) -> FlowField {
    let owned = m.map(|_| false);
    refine_flow_tracked(corr, m, &owned, prior, prior_valid, flow, cfg).0
}

/// Like [`refine_flow`], but pixels in `owned` took their flow from the prior
/// earlier and keep following it until the correlation moves them. Returns
/// the new flow and the new ownership.
pub fn refine_flow_tracked(
    corr: &CorrelationVolume,
    m: &Grid<bool>,
    owned: &Grid<bool>,
    prior: &FlowField,
    prior_valid: &Grid<bool>,
    flow: &FlowField,
    cfg: &FrontendConfig,
) -> (FlowField, Grid<bool>) {
    let mut out = flow.clone();
    let mut own = owned.clone();
    for idx in 0..flow.flow.len() {
        let step = if m[idx] {
            peak_offset(corr, idx, cfg.step_cap, cfg.min_gain)
        } else {
            Vector2::zeros()
        };
        if m[idx] && (!owned[idx] || step != Vector2::zeros() || !prior_valid[idx]) {
            out.flow[idx] += step;
            own[idx] = false;
        } else if prior_valid[idx] {
            out.flow[idx] = if cfg.blend == 1.0 {
                prior.flow[idx]
            } else {
                flow.flow[idx] + (prior.flow[idx] - flow.flow[idx]) * cfg.blend
            };
            own[idx] = true;
        }
    }
    (out, own)
}

/// Confidence from the peak of the unmasked window: the peak score times
/// its margin over the scores outside the peak's 3x3 neighborhood. Where
/// `m` is false the prior's confidence applies, capped at 0.5.
pub fn predict_confidence(corr: &CorrelationVolume, m: &Grid<bool>, prior: &FlowField) -> Grid<f64> {
    let data = (0..corr.width * corr.height)
        .map(|idx| {
            if !m[idx] {
                return prior.confidence[idx].min(0.5);
            }
            let win = corr.window(idx);
            let Some((k, s)) = peak(win, corr) else { return 0.0 };
            let (px, py) = corr.offset(k);
            let (mut sum, mut n) = (0.0, 0usize);
            for (q, &v) in win.iter().enumerate() {
                let (dx, dy) = corr.offset(q);
                if v.is_finite() && ((dx - px).abs() > 1 || (dy - py).abs() > 1) {
                    sum += v;
                    n += 1;
                }
            }
            let rest = if n > 0 { sum / n as f64 } else { 0.0 };
            s.clamp(0.0, 1.0) * (s - rest).clamp(0.0, 1.0)
        })
        .collect();
    Grid::from_vec(corr.width, corr.height, data)
}

/// Result of refining one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedEdge {
    pub flow: FlowField,
    /// Pixels that took the correlation branch.
    pub reliable: usize,
    /// Pixels whose flow now comes from the prior.
    pub prior_owned: Grid<bool>,
}

/// Correlation, masking, refinement and confidence for one edge.
pub fn refine_edge(
    feat_i: &Grid<f64>,
    feat_j: &Grid<f64>,
    flow: &FlowField,
    m: &Grid<bool>,
    owned: &Grid<bool>,
    prior: &FlowField,
    prior_valid: &Grid<bool>,
    cfg: &FrontendConfig,
) -> RefinedEdge {
    let corr = correlation_volume(feat_i, feat_j, flow, cfg.radius, cfg.patch_radius);
    let masked = apply_mask(&corr, m);
    let (mut out, prior_owned) = refine_flow_tracked(&masked, m, owned, prior, prior_valid, flow, cfg);
    let from_corr = m.zip_map(&prior_owned, |&a, &b| a && !b);
    out.confidence = predict_confidence(&corr, &from_corr, prior);
    RefinedEdge {
        flow: out,
        reliable: m.count_true(),
        prior_owned,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gt_flow_from_view, render_features, ScenePreset, TrajectoryPreset};
    use nalgebra::Vector3;

    struct Pair {
        k: Intrinsics,
        feat_i: Grid<f64>,
        feat_j: Grid<f64>,
        gt: FlowField,
        in_view: Grid<bool>,
        textureless: Grid<bool>,
    }

    fn pair() -> Pair {
        let k = Intrinsics::working();
        let scene = ScenePreset::Plane.build(TrajectoryPreset::LateralArc, 2, k, 0);
        let vi = scene.render(&scene.trajectory[0], 0);
        let vj = scene.render(&scene.trajectory[1], 1);
        let g = gt_flow_from_view(&scene, &vi, &scene.trajectory[0], &scene.trajectory[1], (0, 1));
        Pair {
            k,
            feat_i: render_features(&vi, 0.0, 0),
            feat_j: render_features(&vj, 0.0, 0),
            gt: g.field,
            in_view: g.in_view,
            textureless: vi.textureless,
        }
    }

    /// Pixels well inside both images, textured, with the window fully in view.
    fn interior(p: &Pair, margin: f64) -> Vec<usize> {
        (0..p.k.num_pixels())
            .filter(|&i| {
                let u = Pixel::of_index(i, p.k.width).to_vector() + p.gt.flow[i];
                let (x, y) = (i % p.k.width, i / p.k.width);
                p.in_view[i]
                    && !p.textureless[i]
                    && x >= 3
                    && y >= 3
                    && x + 3 < p.k.width
                    && y + 3 < p.k.height
                    && u.x >= margin
                    && u.y >= margin
                    && u.x <= p.k.width as f64 - 1.0 - margin
                    && u.y <= p.k.height as f64 - 1.0 - margin
            })
            .collect()
    }

    fn argmax(corr: &CorrelationVolume, idx: usize) -> (isize, isize) {
        let (k, _) = peak(corr.window(idx), corr).unwrap();
        corr.offset(k)
    }

    #[test]
    fn ground_truth_flow_peaks_at_zero() {
        let p = pair();
        let corr = correlation_volume(&p.feat_i, &p.feat_j, &p.gt, 3, 2);
        let px = interior(&p, 6.0);
        let at_zero = px.iter().filter(|&&i| argmax(&corr, i) == (0, 0)).count();
        assert!(at_zero as f64 >= 0.97 * px.len() as f64, "{at_zero}/{}", px.len());
    }

    #[test]
    fn shifted_flow_peaks_at_the_shift() {
        let p = pair();
        let mut f = p.gt.clone();
        f.flow.as_mut_slice().iter_mut().for_each(|v| *v -= Vector2::new(2.0, 0.0));
        let corr = correlation_volume(&p.feat_i, &p.feat_j, &f, 3, 2);
        let px = interior(&p, 6.0);
        let hit = px.iter().filter(|&&i| argmax(&corr, i) == (2, 0)).count();
        assert!(hit as f64 >= 0.95 * px.len() as f64, "{hit}/{}", px.len());
    }

    #[test]
    fn reliable_refinement_recovers_offset_flow() {
        let p = pair();
        let mut f = p.gt.clone();
        f.flow.as_mut_slice().iter_mut().for_each(|v| *v -= Vector2::new(2.0, 1.0));
        let m = Grid::filled(p.k.width, p.k.height, true);
        let prior = FlowField::zeros(0, 1, p.k.width, p.k.height);
        let pv = Grid::filled(p.k.width, p.k.height, false);
        let out = refine_edge(&p.feat_i, &p.feat_j, &f, &m, &m.map(|_| false), &prior, &pv, &FrontendConfig::default());
        let px = interior(&p, 6.0);
        let good = px.iter().filter(|&&i| (out.flow.flow[i] - p.gt.flow[i]).norm() < 0.5).count();
        assert!(good as f64 >= 0.95 * px.len() as f64, "{good}/{}", px.len());
        for &i in &px {
            let before = (f.flow[i] - p.gt.flow[i]).norm();
            let after = (out.flow.flow[i] - p.gt.flow[i]).norm();
            assert!(after <= before + 3.0 + 1e-12);
        }
    }

    #[test]
    fn unreliable_pixels_take_the_prior_exactly() {
        let p = pair();
        let m = Grid::from_fn(p.k.width, p.k.height, |x, _| x % 2 == 0);
        let prior = GeometryPrior {
            depth: DepthMap::new(0, Grid::filled(p.k.width, p.k.height, 3.0)),
            noise_fraction: 0.05,
        };
        let t = Pose::from_translation(Vector3::new(-0.1, 0.0, 0.0));
        let (pf, pv) = geometry_prior_flow(&prior, 1, &t, &p.k);
        let corr = correlation_volume(&p.feat_i, &p.feat_j, &p.gt, 3, 2);
        let out = refine_flow(&apply_mask(&corr, &m), &m, &pf, &pv, &p.gt, &FrontendConfig::default());
        // Scrambled scores must not change masked outputs.
        let mut scrambled = corr.clone();
        scrambled.scores.iter_mut().enumerate().for_each(|(i, s)| *s = (i as f64 * 0.37).sin());
        let again = refine_flow(&apply_mask(&scrambled, &m), &m, &pf, &pv, &p.gt, &FrontendConfig::default());
        for i in 0..m.len() {
            if !m[i] {
                assert_eq!(out.flow[i], pf.flow[i]);
                assert_eq!(again.flow[i], out.flow[i]);
            }
        }
        let conf = predict_confidence(&corr, &m, &pf);
        assert!(conf.iter().zip(m.iter()).all(|(&c, &r)| r || c <= 0.5));
    }

    #[test]
    fn flat_windows_do_not_move() {
        let corr = CorrelationVolume::from_windows(3, 1, 1, vec![0.0; 49]);
        let m = Grid::filled(1, 1, true);
        let f = FlowField::zeros(0, 1, 1, 1);
        let out = refine_flow(&corr, &m, &f, &Grid::filled(1, 1, false), &f, &FrontendConfig::default());
        assert_eq!(out.flow[0], Vector2::zeros());
        assert!(predict_confidence(&corr, &m, &f)[0] <= 0.1);
    }

    #[test]
    fn delta_peak_is_confident() {
        let mut w = vec![0.0; 49];
        w[24 + 1] = 1.0;
        let corr = CorrelationVolume::from_windows(3, 1, 1, w);
        let m = Grid::filled(1, 1, true);
        let f = FlowField::zeros(0, 1, 1, 1);
        assert!(predict_confidence(&corr, &m, &f)[0] >= 0.9);
        let out = refine_flow(&corr, &m, &f, &Grid::filled(1, 1, false), &f, &FrontendConfig::default());
        assert_eq!(out.flow[0], Vector2::new(1.0, 0.0));
    }

    #[test]
    fn prior_owned_pixels_follow_the_prior_until_correlation_moves() {
        let m = Grid::filled(1, 1, true);
        let owned = Grid::filled(1, 1, true);
        let valid = Grid::filled(1, 1, true);
        let f = FlowField::zeros(0, 1, 1, 1);
        let mut prior = f.clone();
        prior.flow[0] = Vector2::new(0.3, -0.2);
        let cfg = FrontendConfig::default();

        let flat = CorrelationVolume::from_windows(3, 1, 1, vec![0.0; 49]);
        let (out, own) = refine_flow_tracked(&flat, &m, &owned, &prior, &valid, &f, &cfg);
        assert_eq!(out.flow[0], prior.flow[0]);
        assert!(own[0]);
        let (out, own) = refine_flow_tracked(&flat, &m, &own.map(|_| false), &prior, &valid, &f, &cfg);
        assert_eq!(out.flow[0], Vector2::zeros());
        assert!(!own[0]);

        let mut w = vec![0.0; 49];
        w[24 + 1] = 1.0;
        let peaked = CorrelationVolume::from_windows(3, 1, 1, w);
        let (out, own) = refine_flow_tracked(&peaked, &m, &owned, &prior, &valid, &f, &cfg);
        assert_eq!(out.flow[0], Vector2::new(1.0, 0.0));
        assert!(!own[0]);
    }

    #[test]
    fn step_is_capped() {
        let mut w = vec![0.0; 49];
        w[48] = 1.0;
        let corr = CorrelationVolume::from_windows(3, 1, 1, w);
        let m = Grid::filled(1, 1, true);
        let f = FlowField::zeros(0, 1, 1, 1);
        let cfg = FrontendConfig {
            step_cap: 2.0,
            ..Default::default()
        };
        let out = refine_flow(&corr, &m, &f, &Grid::filled(1, 1, false), &f, &cfg);
        assert!((out.flow[0].norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn prior_flow_oracles() {
        let p = pair();
        let scene = ScenePreset::Plane.build(TrajectoryPreset::LateralArc, 2, p.k, 0);
        let depth = scene.render(&scene.trajectory[0], 0).depth;
        let t_ji = scene.trajectory[1].compose(&scene.trajectory[0].inverse());
        let prior = GeometryPrior {
            depth: depth.clone(),
            noise_fraction: 0.0,
        };
        let (pf, _) = geometry_prior_flow(&prior, 1, &t_ji, &p.k);
        for i in 0..pf.flow.len() {
            assert!((pf.flow[i] - p.gt.flow[i]).norm() < 1e-6);
        }
        let (zero, _) = geometry_prior_flow(&prior, 1, &Pose::identity(), &p.k);
        assert!(zero.flow.iter().all(|f| f.norm() < 1e-12));

        // Lateral baseline b over a fronto-parallel depth d, prior scaled by 1.1.
        let (b, d) = (0.2, 3.0);
        let t = Pose::from_translation(Vector3::new(b, 0.0, 0.0));
        let flat = |s: f64| GeometryPrior {
            depth: DepthMap::new(0, Grid::filled(p.k.width, p.k.height, d * s)),
            noise_fraction: 0.0,
        };
        let (exact, _) = geometry_prior_flow(&flat(1.0), 1, &t, &p.k);
        let (scaled, _) = geometry_prior_flow(&flat(1.1), 1, &t, &p.k);
        let expect = b * p.k.fx * (1.0 / d - 1.0 / (1.1 * d)).abs();
        for i in 0..exact.flow.len() {
            assert!(((exact.flow[i] - scaled.flow[i]).norm() - expect).abs() < 1e-9);
        }
    }
}
