//! Keyframes, covisibility edges and the outer refinement schedule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ba::{ba_iterate, BaConfig, BaEdge, BaState, BaTrace};
use crate::camera::Intrinsics;
use crate::error::{Error, Result};
use crate::frontend::{geometry_prior_flow, refine_edge, FrontendConfig, GeometryPrior, RefinedEdge};
use crate::grid::Grid;
use crate::reliability::{combine, edge_mask_for, node_mask_for, ReliabilityConfig, ReliabilityMask};
use crate::residuals::{edge_residuals, DepthMap, EdgeResiduals, FlowField};
use crate::se3::Pose;

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub id: usize,
    pub pose: Pose,
    pub depth: DepthMap,
    pub features: Grid<f64>,
    pub prior: GeometryPrior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub flow: FlowField,
    pub residuals: EdgeResiduals,
    pub mask: ReliabilityMask,
    /// Pixels whose flow was last set from the geometry prior.
    pub prior_owned: Grid<bool>,
}

/// How edges are laid out over the keyframes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EdgePattern {
    /// Every ordered pair with `0 < |i - j| <= window`.
    Batch { window: usize },
    /// The newest keyframe to each of its `k` latest predecessors, both ways.
    Online { k: usize },
}

impl Default for EdgePattern {
    fn default() -> Self {
        EdgePattern::Batch { window: 2 }
    }
}

/// Directed edges for `n` keyframes, in a fixed order.
pub fn build_edges(n: usize, pattern: EdgePattern) -> Vec<(usize, usize)> {
    match pattern {
        EdgePattern::Batch { window } => (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i && i.abs_diff(j) <= window).map(move |j| (i, j)))
            .collect(),
        EdgePattern::Online { k } => {
            let Some(last) = n.checked_sub(1) else { return Vec::new() };
            (last.saturating_sub(k)..last)
                .rev()
                .flat_map(|p| [(last, p), (p, last)])
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyframePolicy {
    /// Mean flow magnitude to the last keyframe needed for admission, pixels.
    pub min_mean_flow: f64,
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        Self { min_mean_flow: 2.5 }
    }
}

/// Admits a candidate when the graph is empty or its mean flow to the last
/// keyframe exceeds the policy threshold.
pub fn admit_keyframe(graph: &CovisGraph, flow_to_last: Option<&FlowField>, policy: &KeyframePolicy) -> bool {
    if graph.nodes.is_empty() {
        return true;
    }
    flow_to_last.is_some_and(|f| f.mean_magnitude() > policy.min_mean_flow)
}

/// Pose for the next frame assuming the last relative motion repeats.
pub fn constant_velocity(prev: &Pose, last: &Pose) -> Pose {
    last.compose(&prev.inverse()).compose(last)
}

/// Depth for a new keyframe: the prior when present, else the median of
/// the previous keyframe's depth.
pub fn initial_depth(prior: Option<&GeometryPrior>, previous: Option<&DepthMap>, frame_id: usize, k: &Intrinsics) -> DepthMap {
    if let Some(p) = prior {
        return DepthMap::new(frame_id, p.depth.values.clone());
    }
    let median = previous.map_or(1.0, |d| {
        let mut v = d.values.as_slice().to_vec();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    });
    DepthMap::new(frame_id, Grid::filled(k.width, k.height, median))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterConfig {
    pub ba: BaConfig,
    pub reliability: ReliabilityConfig,
    pub frontend: FrontendConfig,
}

impl OuterConfig {
    pub fn validate(&self) -> Result<()> {
        self.ba.validate()?;
        self.reliability.validate()?;
        self.frontend.validate()
    }
}

/// Summary of one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub ba: BaTrace,
    /// Fraction of pixels over all edges marked reliable after the refresh.
    pub reliable_fraction: f64,
    /// Mean flow change applied by the refinement, pixels.
    pub mean_flow_update: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovisGraph {
    pub k: Intrinsics,
    pub nodes: Vec<Keyframe>,
    pub edges: Vec<Edge>,
}

impl CovisGraph {
    pub fn new(k: Intrinsics) -> Self {
        Self {
            k,
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    /// Adds a keyframe and returns its id.
    pub fn add_keyframe(&mut self, pose: Pose, depth: DepthMap, features: Grid<f64>, prior: GeometryPrior) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Keyframe {
            id,
            pose,
            depth: DepthMap::new(id, depth.values),
            features,
            prior,
        });
        id
    }

    /// Adds a directed edge carrying `flow`. Masks start all-ones and
    /// residuals empty until the next [`CovisGraph::refresh`].
    pub fn add_edge(&mut self, i: usize, j: usize, flow: FlowField) -> Result<()> {
        let n = self.nodes.len();
        if i >= n || j >= n {
            return Err(Error::Graph(format!("edge ({i}, {j}) references a missing keyframe")));
        }
        if i == j {
            return Err(Error::Graph(format!("self edge on keyframe {i}")));
        }
        if self.edges.iter().any(|e| e.i == i && e.j == j) {
            return Err(Error::Graph(format!("duplicate edge ({i}, {j})")));
        }
        let (w, h) = (self.k.width, self.k.height);
        if flow.flow.width() != w || flow.flow.height() != h {
            return Err(Error::Graph(format!("flow of edge ({i}, {j}) has the wrong shape")));
        }
        let mut flow = flow;
        flow.source_id = i;
        flow.target_id = j;
        self.edges.push(Edge {
            i,
            j,
            flow,
            residuals: EdgeResiduals {
                r_flow: Grid::filled(w, h, nalgebra::Vector2::zeros()),
                r_geo: Grid::filled(w, h, 0.0),
                valid: Grid::filled(w, h, false),
                geo_valid: Grid::filled(w, h, false),
                omega_set: Grid::filled(w, h, false),
            },
            mask: ReliabilityMask::all_ones(w, h),
            prior_owned: Grid::filled(w, h, false),
        });
        Ok(())
    }

    /// Out-neighbors of `i`, in edge order.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.i == i).map(|e| e.j).collect()
    }

    pub fn check_invariants(&self) -> Result<()> {
        for (idx, n) in self.nodes.iter().enumerate() {
            if n.id != idx || n.depth.frame_id != idx {
                return Err(Error::Graph(format!("keyframe {idx} has inconsistent ids")));
            }
        }
        for (a, e) in self.edges.iter().enumerate() {
            if e.i >= self.nodes.len() || e.j >= self.nodes.len() || e.i == e.j {
                return Err(Error::Graph(format!("edge ({}, {}) is malformed", e.i, e.j)));
            }
            if self.edges[..a].iter().any(|o| o.i == e.i && o.j == e.j) {
                return Err(Error::Graph(format!("duplicate edge ({}, {})", e.i, e.j)));
            }
        }
        Ok(())
    }

    pub fn state(&self) -> BaState {
        BaState::new(
            self.nodes.iter().map(|n| n.pose).collect(),
            self.nodes.iter().map(|n| n.depth.clone()).collect(),
        )
    }

    pub fn set_state(&mut self, state: BaState) {
        for (n, (p, d)) in self.nodes.iter_mut().zip(state.poses.into_iter().zip(state.depths)) {
            n.pose = p;
            n.depth = d;
        }
    }

    /// Recomputes residuals on every edge and the masks derived from them.
    pub fn refresh(&mut self, cfg: &OuterConfig) -> Result<()> {
        let k = self.k;
        let nodes = &self.nodes;
        let residuals: Vec<EdgeResiduals> = self
            .edges
            .par_iter()
            .map(|e| {
                let (a, b) = (&nodes[e.i], &nodes[e.j]);
                edge_residuals(&a.pose, &b.pose, &a.depth, &b.depth, &e.flow, &k, cfg.ba.tau)
            })
            .collect();
        let node_masks = (0..self.nodes.len())
            .map(|f| {
                let out: Vec<&EdgeResiduals> = self
                    .edges
                    .iter()
                    .zip(&residuals)
                    .filter(|(e, _)| e.i == f)
                    .map(|(_, r)| r)
                    .collect();
                if out.is_empty() {
                    Ok(None)
                } else {
                    node_mask_for(f, &out, &cfg.reliability).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        for (e, r) in self.edges.iter_mut().zip(residuals) {
            let m_edge = edge_mask_for(&r, &cfg.reliability);
            let m_node = node_masks[e.i].clone().ok_or(Error::NoNeighbors(e.i))?;
            let m = combine(&m_edge, &m_node);
            e.mask = ReliabilityMask { m_edge, m_node, m };
            e.residuals = r;
        }
        Ok(())
    }

    /// Correlation or prior driven update of every edge's flow and confidence.
    /// Returns the mean flow change.
    pub fn refine_flows(&mut self, cfg: &FrontendConfig) -> f64 {
        let k = self.k;
        let nodes = &self.nodes;
        let refined: Vec<RefinedEdge> = self
            .edges
            .par_iter()
            .map(|e| {
                let (a, b) = (&nodes[e.i], &nodes[e.j]);
                let t_ji = b.pose.compose(&a.pose.inverse());
                let (prior, prior_valid) = geometry_prior_flow(&a.prior, e.j, &t_ji, &k);
                refine_edge(&a.features, &b.features, &e.flow, &e.mask.m, &e.prior_owned, &prior, &prior_valid, cfg)
            })
            .collect();
        let mut total = 0.0;
        let mut count = 0usize;
        for (e, r) in self.edges.iter_mut().zip(refined) {
            let f = r.flow;
            total += e.flow.flow.iter().zip(f.flow.iter()).map(|(a, b)| (a - b).norm()).sum::<f64>();
            count += f.flow.len();
            e.flow = f;
            e.prior_owned = r.prior_owned;
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }

    /// Runs the damped BA steps on the current flows.
    pub fn optimize(&mut self, cfg: &BaConfig) -> Result<BaTrace> {
        let mut state = self.state();
        let edges: Vec<BaEdge> = self
            .edges
            .iter()
            .map(|e| BaEdge {
                i: e.i,
                j: e.j,
                flow: &e.flow,
            })
            .collect();
        let trace = ba_iterate(&mut state, &edges, &self.k, cfg)?;
        self.set_state(state);
        Ok(trace)
    }

    /// One flow update, the BA steps, then the residual and mask refresh.
    pub fn outer_iteration(&mut self, cfg: &OuterConfig) -> Result<IterationTrace> {
        if self.edges.is_empty() {
            return Err(Error::Graph("outer iteration on a graph without edges".into()));
        }
        let mean_flow_update = self.refine_flows(&cfg.frontend);
        let ba = self.optimize(&cfg.ba)?;
        self.refresh(cfg)?;
        let total: usize = self.edges.iter().map(|e| e.mask.m.len()).sum();
        let reliable: usize = self.edges.iter().map(|e| e.mask.m.count_true()).sum();
        Ok(IterationTrace {
            ba,
            reliable_fraction: reliable as f64 / total.max(1) as f64,
            mean_flow_update,
        })
    }
}
