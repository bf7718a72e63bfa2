//! Seeded, exactly reproducible corruption of flows, depth priors and features.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{GtFlow, RenderedView};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::residuals::{DepthMap, FlowField};

/// Rectangle of source pixels whose flow is shifted by a fixed offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Patch {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub offset: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSpec {
    /// Gaussian flow noise, pixels.
    pub flow_noise_sigma: f64,
    pub patches: Vec<Patch>,
    /// Fraction of pixels to cover with random patches (in addition to `patches`).
    pub random_patch_fraction: f64,
    /// Offset magnitude range for random patches, pixels.
    pub random_patch_offset: [f64; 2],
    /// Side length of random patches, pixels.
    pub random_patch_size: usize,
    /// Multiplicative depth-prior noise bound, e.g. 0.05 for +-5%.
    pub depth_prior_noise: f64,
    /// Replace flows of occluded pixels with the flow of their occluder.
    pub occlusion: bool,
    /// Magnitude of a per-edge constant flow error inside textureless regions, pixels.
    pub textureless_offset: f64,
    /// Gaussian noise added to rendered intensities used as correlation features.
    pub feature_noise_sigma: f64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            flow_noise_sigma: 0.0,
            patches: Vec::new(),
            random_patch_fraction: 0.0,
            random_patch_offset: [8.0, 15.0],
            random_patch_size: 6,
            depth_prior_noise: 0.0,
            occlusion: false,
            textureless_offset: 0.0,
            feature_noise_sigma: 0.0,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("corruption: {m}")));
        if !(self.flow_noise_sigma >= 0.0 && self.feature_noise_sigma >= 0.0) {
            return bad("noise sigmas must be non-negative");
        }
        if !(0.0..1.0).contains(&self.depth_prior_noise) {
            return bad("depth_prior_noise must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.random_patch_fraction) {
            return bad("random_patch_fraction must lie in [0, 1]");
        }
        if self.random_patch_size == 0 || self.random_patch_size > width.min(height) {
            return bad("random_patch_size out of range");
        }
        if self.random_patch_offset[0] > self.random_patch_offset[1] || self.random_patch_offset[0] < 0.0 {
            return bad("random_patch_offset must be an ordered non-negative range");
        }
        if self.textureless_offset < 0.0 {
            return bad("textureless_offset must be non-negative");
        }
        for p in &self.patches {
            if p.w == 0 || p.h == 0 || p.x + p.w > width || p.y + p.h > height {
                return bad("patch outside image bounds");
            }
        }
        Ok(())
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector2<f64> {
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    Vector2::new(a.cos(), a.sin())
}

/// Corrupts a ground-truth flow. Returns the corrupted field and the exact
/// mask of pixels altered by patches, occlusion or textureless offsets.
/// Gaussian noise alone does not mark a pixel as corrupted.
pub fn corrupt_flow(gt: &GtFlow, source: &RenderedView, spec: &CorruptionSpec, seed: u64) -> (FlowField, Grid<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = gt.field.clone();
    let (w, h) = (out.flow.width(), out.flow.height());
    let mut mask = Grid::filled(w, h, false);

    if spec.flow_noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.flow_noise_sigma).expect("finite sigma");
        for f in out.flow.as_mut_slice() {
            f.x += normal.sample(&mut rng);
            f.y += normal.sample(&mut rng);
        }
    }

    let mut patches = spec.patches.clone();
    if spec.random_patch_fraction > 0.0 {
        let side = spec.random_patch_size;
        let target = (spec.random_patch_fraction * (w * h) as f64).round() as usize;
        let mut covered = Grid::filled(w, h, false);
        let mut count = 0;
        let mut attempts = 0;
        while count < target && attempts < 10_000 {
            attempts += 1;
            let x = rng.random_range(0..=w - side);
            let y = rng.random_range(0..=h - side);
            let overlaps = (y..y + side).any(|yy| (x..x + side).any(|xx| *covered.get(xx, yy)));
            if overlaps {
                continue;
            }
            let [lo, hi] = spec.random_patch_offset;
            let off = random_unit(&mut rng) * rng.random_range(lo..=hi);
            // Trim the last patch so the covered count hits the target.
            let rows = side.min((target - count).div_ceil(side));
            for yy in y..y + rows {
                for xx in x..x + side {
                    if count < target {
                        *covered.get_mut(xx, yy) = true;
                        count += 1;
                    }
                }
            }
            patches.push(Patch {
                x,
                y,
                w: side,
                h: rows,
                offset: [off.x, off.y],
            });
        }
        for idx in 0..w * h {
            if covered[idx] {
                mask[idx] = true;
            }
        }
        for p in patches.iter().skip(spec.patches.len()) {
            let off = Vector2::new(p.offset[0], p.offset[1]);
            for yy in p.y..p.y + p.h {
                for xx in p.x..p.x + p.w {
                    if *covered.get(xx, yy) {
                        *out.flow.get_mut(xx, yy) += off;
                    }
                }
            }
        }
    }
    for p in &spec.patches {
        let off = Vector2::new(p.offset[0], p.offset[1]);
        for yy in p.y..p.y + p.h {
            for xx in p.x..p.x + p.w {
                *out.flow.get_mut(xx, yy) += off;
                *mask.get_mut(xx, yy) = true;
            }
        }
    }

    if spec.occlusion {
        for idx in 0..w * h {
            if gt.occluded[idx] {
                out.flow[idx] = gt.occluder_flow[idx];
                mask[idx] = true;
            }
        }
    }

    if spec.textureless_offset > 0.0 {
        let off = random_unit(&mut rng) * spec.textureless_offset;
        for idx in 0..w * h {
            if source.textureless[idx] {
                out.flow[idx] += off;
                mask[idx] = true;
            }
        }
    }
    (out, mask)
}

/// Multiplies every depth by an independent factor in `[1 - f, 1 + f]`.
pub fn corrupt_depth(gt: &DepthMap, fraction: f64, seed: u64) -> DepthMap {
    if fraction == 0.0 {
        return gt.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DepthMap::new(gt.frame_id, gt.values.map(|&d| d * (1.0 + rng.random_range(-fraction..=fraction))))
}

/// Correlation features: rendered intensity plus Gaussian noise.
pub fn render_features(view: &RenderedView, sigma: f64, seed: u64) -> Grid<f64> {
    if sigma == 0.0 {
        return view.intensity.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    view.intensity.map(|&v| v + normal.sample(&mut rng))
}
