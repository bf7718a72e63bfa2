//! Binary per-pixel reliability masks from optimization residuals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::residuals::EdgeResiduals;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReliabilityConfig {
    /// Flow residual threshold, pixels.
    pub tau_edge: f64,
    /// Mean geometry residual threshold over neighbors, pixels.
    pub tau_node: f64,
    /// When off, the edge mask is all ones.
    pub use_edge: bool,
    /// When off, the node mask is all ones.
    pub use_node: bool,
}

impl Default for ReliabilityConfig {
    fn default() -> Self {
        Self {
            tau_edge: 5.0,
            tau_node: 5.0,
            use_edge: true,
            use_node: true,
        }
    }
}

impl ReliabilityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_edge > 0.0 && self.tau_node > 0.0 {
            Ok(())
        } else {
            Err(Error::Config("reliability thresholds must be positive".into()))
        }
    }
}

/// Masks of one directed edge `i -> j`; `m_node` belongs to frame `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityMask {
    pub m_edge: Grid<bool>,
    pub m_node: Grid<bool>,
    pub m: Grid<bool>,
}

impl ReliabilityMask {
    pub fn new(m_edge: Grid<bool>, m_node: Grid<bool>) -> Self {
        let m = combine(&m_edge, &m_node);
        Self { m_edge, m_node, m }
    }

    pub fn all_ones(width: usize, height: usize) -> Self {
        Self::new(Grid::filled(width, height, true), Grid::filled(width, height, true))
    }

    /// Fraction of pixels marked reliable.
    pub fn reliable_fraction(&self) -> f64 {
        self.m.count_true() as f64 / self.m.len().max(1) as f64
    }
}

/// `0` where the flow residual reaches `tau_edge`. Pixels whose projection
/// leaves the target frame have no residual to judge and stay `1`.
pub fn edge_mask(r_flow: &Grid<f64>, valid: &Grid<bool>, tau_edge: f64) -> Grid<bool> {
    r_flow.zip_map(valid, |&r, &v| !v || r < tau_edge)
}

/// `1` where the geometry residual averaged over the out-neighbors of the
/// frame is below `tau_node`. Edges whose projection leaves the target frame
/// are left out of the mean, and a pixel with no such edge stays `1`. A pixel
/// that projects but cannot be compared (depth edge, sample outside the
/// target map) contributes `tau_node` for that edge.
pub fn node_mask(frame: usize, out_edges: &[&EdgeResiduals], tau_node: f64) -> Result<Grid<bool>> {
    let Some(first) = out_edges.first() else {
        return Err(Error::NoNeighbors(frame));
    };
    let (w, h) = (first.r_geo.width(), first.r_geo.height());
    Ok(Grid::from_fn(w, h, |x, y| {
        let (mut sum, mut n) = (0.0, 0usize);
        for e in out_edges.iter().filter(|e| *e.valid.get(x, y)) {
            sum += if *e.geo_valid.get(x, y) { *e.r_geo.get(x, y) } else { tau_node };
            n += 1;
        }
        n == 0 || sum / (n as f64) < tau_node
    }))
}

pub fn combine(m_edge: &Grid<bool>, m_node: &Grid<bool>) -> Grid<bool> {
    assert!(m_edge.same_shape(m_node), "mask shapes differ");
    m_edge.zip_map(m_node, |&a, &b| a && b)
}

/// Edge mask for `residuals`, honoring the ablation switch.
pub fn edge_mask_for(residuals: &EdgeResiduals, cfg: &ReliabilityConfig) -> Grid<bool> {
    if cfg.use_edge {
        edge_mask(&residuals.flow_magnitudes(), &residuals.valid, cfg.tau_edge)
    } else {
        residuals.valid.map(|_| true)
    }
}

/// Node mask for `frame`, honoring the ablation switch.
pub fn node_mask_for(frame: usize, out_edges: &[&EdgeResiduals], cfg: &ReliabilityConfig) -> Result<Grid<bool>> {
    if cfg.use_node {
        node_mask(frame, out_edges, cfg.tau_node)
    } else {
        let first = out_edges.first().ok_or(Error::NoNeighbors(frame))?;
        Ok(first.valid.map(|_| true))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn residuals(r_geo: &[f64], geo_valid: &[bool]) -> EdgeResiduals {
        let n = r_geo.len();
        EdgeResiduals {
            r_flow: Grid::filled(n, 1, nalgebra::Vector2::zeros()),
            r_geo: Grid::from_vec(n, 1, r_geo.to_vec()),
            valid: Grid::filled(n, 1, true),
            geo_valid: Grid::from_vec(n, 1, geo_valid.to_vec()),
            omega_set: Grid::filled(n, 1, false),
        }
    }

    #[test]
    fn edge_threshold_hand_values() {
        let r = Grid::from_vec(4, 1, vec![4.9, 5.1, 0.0, 0.0]);
        let v = Grid::from_vec(4, 1, vec![true, true, true, false]);
        assert_eq!(edge_mask(&r, &v, 5.0).into_vec(), vec![true, false, true, true]);
    }

    #[test]
    fn node_mean_hand_values() {
        let a = residuals(&[0.0, 3.0, 3.0], &[true; 3]);
        let b = residuals(&[0.0, 9.0, 5.0], &[true; 3]);
        assert!(node_mask(0, &[&a], 5.0).unwrap()[0]);
        assert_eq!(node_mask(0, &[&a, &b], 5.0).unwrap().into_vec(), vec![true, false, true]);
    }

    #[test]
    fn unverifiable_pixels_saturate() {
        let a = residuals(&[0.0], &[true]);
        let b = residuals(&[0.0], &[false]);
        // Mean of (0, 5) = 2.5 stays below 5; two unverifiable edges do not.
        assert!(node_mask(0, &[&a, &b], 5.0).unwrap()[0]);
        assert!(!node_mask(0, &[&b, &b], 5.0).unwrap()[0]);
    }

    #[test]
    fn pixels_leaving_every_neighbor_stay_reliable() {
        let mut out = residuals(&[9.0], &[false]);
        out.valid = Grid::filled(1, 1, false);
        let bad = residuals(&[9.0], &[true]);
        assert!(node_mask(0, &[&out, &out], 5.0).unwrap()[0]);
        assert!(!node_mask(0, &[&out, &bad], 5.0).unwrap()[0]);
    }

    #[test]
    fn isolated_frame_is_an_error() {
        assert!(matches!(node_mask(3, &[], 5.0), Err(Error::NoNeighbors(3))));
    }

    #[test]
    fn combine_truth_table() {
        let a = Grid::from_vec(2, 2, vec![false, false, true, true]);
        let b = Grid::from_vec(2, 2, vec![false, true, false, true]);
        assert_eq!(combine(&a, &b).into_vec(), vec![false, false, false, true]);
    }

    proptest! {
        #[test]
        fn raising_thresholds_is_monotone(
            r in proptest::collection::vec(0.0f64..12.0, 16),
            g in proptest::collection::vec(0.0f64..12.0, 16),
            tau in 0.5f64..8.0,
            extra in 0.0f64..4.0,
        ) {
            let rf = Grid::from_vec(16, 1, r);
            let valid = Grid::filled(16, 1, true);
            let lo = edge_mask(&rf, &valid, tau);
            let hi = edge_mask(&rf, &valid, tau + extra);
            prop_assert!(lo.iter().zip(hi.iter()).all(|(a, b)| !a || *b));
            let e = residuals(&g, &[true; 16]);
            let lo = node_mask(0, &[&e], tau).unwrap();
            let hi = node_mask(0, &[&e], tau + extra).unwrap();
            prop_assert!(lo.iter().zip(hi.iter()).all(|(a, b)| !a || *b));
        }
    }
}
