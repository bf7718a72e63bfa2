//! Experiment configuration, the end-to-end synthetic run and its reports.
//!
//! Config files are TOML. Top-level keys: `seed`, `frames`, `iterations`,
//! `scene`, `trajectory`, `edges`, `clip`, `output_dir`, and the sections
//! `[init]`, `[corruption]`, `[ba]`, `[reliability]`, `[frontend]`. Unknown
//! keys are rejected. The ablation switches are `ba.bi_ba`,
//! `reliability.use_edge` and `reliability.use_node`.
//!
//! `trace.csv` columns, one row per outer iteration (row 0 is the initial state):
//!
//! | column | meaning |
//! |---|---|
//! | iteration | outer iteration index |
//! | cost | BA cost after the iteration |
//! | ate | Sim(3)-aligned ATE RMSE, metres |
//! | reliable_fraction | fraction of edge pixels with `m = 1` |
//! | mean_flow_update | mean flow change from the refinement, px |
//! | flow_epe | mean flow error over visible pixels, px |
//! | restored | fraction of corrupted pixels within 1 px of the true flow |
//! | ba_accepted | accepted BA steps |
//! | ba_rejected | rejected BA steps |
//!
//! `metrics.csv` holds one row: `ate,auc,accuracy,completion,chamfer,depth_error,restored`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ba::{total_cost, BaEdge};
use crate::camera::Intrinsics;
use crate::error::{Error, Result};
use crate::frontend::GeometryPrior;
use crate::graph::{build_edges, CovisGraph, EdgePattern, OuterConfig};
use crate::grid::Grid;
use crate::io::{export_ply, write_trajectory};
use crate::metrics::{
    align_poses, auc, cloud_metrics, default_thresholds, depth_cloud, mean_relative_depth_error, translation_errors,
    CloudMetrics, PointCloud, Similarity, Trajectory, DEFAULT_CLIP, DEFAULT_MAX_GAP,
};
use crate::se3::{Pose, Twist};
use crate::synth::{
    corrupt_depth, corrupt_flow, gt_flow_from_view, render_features, CorruptionSpec, GtFlow, RenderedView, ScenePreset,
    SynthScene, TrajectoryPreset,
};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "BCBA_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "bcba_out";

/// Initial pose perturbation of every frame except the gauge frame 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitPerturbation {
    /// Upper bound of the rotation error, degrees.
    pub rotation_deg: f64,
    /// Upper bound of the translation error, metres.
    pub translation_m: f64,
}

impl Default for InitPerturbation {
    fn default() -> Self {
        Self {
            rotation_deg: 2.0,
            translation_m: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub frames: usize,
    pub iterations: usize,
    pub scene: ScenePreset,
    pub trajectory: TrajectoryPreset,
    pub edges: EdgePattern,
    /// Cloud metric clipping distance, metres.
    pub clip: f64,
    pub output_dir: Option<PathBuf>,
    pub init: InitPerturbation,
    pub corruption: CorruptionSpec,
    pub ba: crate::ba::BaConfig,
    pub reliability: crate::reliability::ReliabilityConfig,
    pub frontend: crate::frontend::FrontendConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let outer = OuterConfig::default();
        Self {
            seed: 0,
            frames: 6,
            iterations: 8,
            scene: ScenePreset::PlaneCard,
            trajectory: TrajectoryPreset::LateralArc,
            edges: EdgePattern::default(),
            clip: DEFAULT_CLIP,
            output_dir: None,
            init: InitPerturbation::default(),
            corruption: CorruptionSpec::default(),
            ba: outer.ba,
            reliability: outer.reliability,
            frontend: outer.frontend,
        }
    }
}

/// The three switches of the component ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub bi_ba: bool,
    pub m_node: bool,
    pub m_edge: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        bi_ba: true,
        m_node: true,
        m_edge: true,
    };
    pub const BASELINE: Ablation = Ablation {
        bi_ba: false,
        m_node: false,
        m_edge: false,
    };

    /// All eight settings, baseline first and full model last.
    pub fn grid() -> Vec<Ablation> {
        (0..8)
            .map(|b| Ablation {
                bi_ba: b & 4 != 0,
                m_node: b & 2 != 0,
                m_edge: b & 1 != 0,
            })
            .collect()
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 3 {
            return Err(Error::Config("frames must be at least 3 for trajectory alignment".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config("clip must be positive".into()));
        }
        if !(self.init.rotation_deg >= 0.0 && self.init.translation_m >= 0.0) {
            return Err(Error::Config("init perturbation must be non-negative".into()));
        }
        match self.edges {
            EdgePattern::Batch { window: 0 } | EdgePattern::Online { k: 0 } => {
                return Err(Error::Config("edge pattern must connect at least one neighbor".into()))
            }
            _ => {}
        }
        let k = Intrinsics::working();
        self.corruption.validate(k.width, k.height)?;
        self.outer().validate()?;
        if self.ba.fixed_frames.iter().any(|&f| f >= self.frames) {
            return Err(Error::Config("fixed frame index out of range".into()));
        }
        Ok(())
    }

    pub fn outer(&self) -> OuterConfig {
        OuterConfig {
            ba: self.ba.clone(),
            reliability: self.reliability.clone(),
            frontend: self.frontend.clone(),
        }
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            bi_ba: self.ba.bi_ba,
            m_node: self.reliability.use_node,
            m_edge: self.reliability.use_edge,
        }
    }

    pub fn with_ablation(mut self, a: Ablation) -> Self {
        self.ba.bi_ba = a.bi_ba;
        self.reliability.use_node = a.m_node;
        self.reliability.use_edge = a.m_edge;
        self
    }

    /// Output directory: `cli` if given, then the config, then the
    /// environment, then [`DEFAULT_OUTPUT_DIR`].
    pub fn resolve_output_dir(&self, cli: Option<&Path>) -> PathBuf {
        cli.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}

fn sub_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn random_direction(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// `pose` moved by a rotation of at most `max_angle` radians about a random
/// axis through the camera center and a translation of at most `max_shift`.
pub fn perturb_pose(pose: &Pose, max_angle: f64, max_shift: f64, rng: &mut ChaCha8Rng) -> Pose {
    let axis = Unit::new_normalize(random_direction(rng));
    let angle = rng.random_range(0.0..=1.0) * max_angle;
    let shift = random_direction(rng) * rng.random_range(0.0..=1.0) * max_shift;
    let c2w = pose.inverse();
    let rot = Pose::exp(&Twist::new(axis.into_inner() * angle, Vector3::zeros()));
    let moved = Pose::new(rot.rotation * c2w.rotation, c2w.translation + shift);
    moved.inverse()
}

/// Ground truth and corrupted inputs of one synthetic experiment.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub scene: SynthScene,
    pub views: Vec<RenderedView>,
    pub gt_poses: Vec<Pose>,
    pub init_poses: Vec<Pose>,
    pub priors: Vec<GeometryPrior>,
    pub features: Vec<Grid<f64>>,
    pub edges: Vec<ScenarioEdge>,
}

#[derive(Debug, Clone)]
pub struct ScenarioEdge {
    pub i: usize,
    pub j: usize,
    pub gt: GtFlow,
    pub flow: crate::residuals::FlowField,
    /// Pixels whose input flow was deliberately corrupted.
    pub corrupted: Grid<bool>,
}

impl Scenario {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let k = Intrinsics::working();
        let scene = cfg.scene.build(cfg.trajectory, cfg.frames, k, cfg.seed);
        scene.validate()?;
        let gt_poses = scene.trajectory.clone();
        let views: Vec<RenderedView> = gt_poses.iter().enumerate().map(|(f, p)| scene.render(p, f)).collect();
        let spec = &cfg.corruption;
        let priors = views
            .iter()
            .enumerate()
            .map(|(f, v)| GeometryPrior {
                depth: corrupt_depth(&v.depth, spec.depth_prior_noise, sub_seed(cfg.seed, 1, f as u64)),
                noise_fraction: spec.depth_prior_noise,
            })
            .collect();
        let features = views
            .iter()
            .enumerate()
            .map(|(f, v)| render_features(v, spec.feature_noise_sigma, sub_seed(cfg.seed, 2, f as u64)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 3, 0));
        let init_poses = gt_poses
            .iter()
            .enumerate()
            .map(|(f, p)| {
                if cfg.ba.fixed_frames.contains(&f) {
                    *p
                } else {
                    perturb_pose(p, cfg.init.rotation_deg.to_radians(), cfg.init.translation_m, &mut rng)
                }
            })
            .collect();
        let edges = build_edges(cfg.frames, cfg.edges)
            .into_iter()
            .enumerate()
            .map(|(n, (i, j))| {
                let gt = gt_flow_from_view(&scene, &views[i], &gt_poses[i], &gt_poses[j], (i, j));
                let (flow, corrupted) = corrupt_flow(&gt, &views[i], spec, sub_seed(cfg.seed, 4, n as u64));
                ScenarioEdge {
                    i,
                    j,
                    gt,
                    flow,
                    corrupted,
                }
            })
            .collect();
        Ok(Self {
            scene,
            views,
            gt_poses,
            init_poses,
            priors,
            features,
            edges,
        })
    }

    pub fn intrinsics(&self) -> Intrinsics {
        self.scene.intrinsics
    }

    /// Graph initialized from the perturbed poses and the prior depths.
    pub fn graph(&self) -> Result<CovisGraph> {
        let mut g = CovisGraph::new(self.intrinsics());
        for f in 0..self.views.len() {
            g.add_keyframe(
                self.init_poses[f],
                self.priors[f].depth.clone(),
                self.features[f].clone(),
                self.priors[f].clone(),
            );
        }
        for e in &self.edges {
            g.add_edge(e.i, e.j, e.flow.clone())?;
        }
        Ok(g)
    }

    pub fn gt_trajectory(&self) -> Trajectory {
        Trajectory::uniform(self.gt_poses.clone(), 1.0)
    }

    pub fn gt_cloud(&self) -> PointCloud {
        let k = self.intrinsics();
        let mut cloud = PointCloud::default();
        for (p, v) in self.gt_poses.iter().zip(&self.views) {
            cloud.extend(depth_cloud(p, &v.depth, &k, Some(&v.valid)));
        }
        cloud
    }

    /// Mean flow error over visible pixels and the fraction of corrupted
    /// pixels within 1 px of the true flow (1 when nothing was corrupted).
    pub fn flow_errors(&self, graph: &CovisGraph) -> (f64, f64) {
        let (mut sum, mut n, mut restored, mut corrupted) = (0.0, 0usize, 0usize, 0usize);
        for (s, e) in self.edges.iter().zip(&graph.edges) {
            for idx in 0..s.gt.field.flow.len() {
                let visible = s.gt.in_view[idx] && !s.gt.occluded[idx];
                let err = (e.flow.flow[idx] - s.gt.field.flow[idx]).norm();
                if visible {
                    sum += err;
                    n += 1;
                }
                if s.corrupted[idx] && visible {
                    corrupted += 1;
                    if err < 1.0 {
                        restored += 1;
                    }
                }
            }
        }
        let epe = if n == 0 { 0.0 } else { sum / n as f64 };
        let frac = if corrupted == 0 { 1.0 } else { restored as f64 / corrupted as f64 };
        (epe, frac)
    }
}

/// Estimated trajectory of `graph` with unit time steps.
pub fn estimated_trajectory(graph: &CovisGraph) -> Trajectory {
    Trajectory::uniform(graph.nodes.iter().map(|n| n.pose).collect(), 1.0)
}

/// Union of the per-keyframe clouds of `graph` mapped by `sim`.
pub fn estimated_cloud(graph: &CovisGraph, sim: &Similarity) -> PointCloud {
    let mut cloud = PointCloud::default();
    for n in &graph.nodes {
        cloud.extend(depth_cloud(&n.pose, &n.depth, &graph.k, None));
    }
    cloud.transformed(sim)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub cost: f64,
    pub ate: f64,
    pub reliable_fraction: f64,
    pub mean_flow_update: f64,
    pub flow_epe: f64,
    pub restored: f64,
    pub ba_accepted: usize,
    pub ba_rejected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalMetrics {
    pub ate: f64,
    pub auc: f64,
    pub cloud: CloudMetrics,
    /// Mean relative depth error after applying the alignment scale.
    pub depth_error: f64,
    pub restored: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Timings {
    pub setup_s: f64,
    pub iterations_s: Vec<f64>,
    pub evaluation_s: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub trace: Vec<TraceRow>,
    pub metrics: FinalMetrics,
    pub timings: Timings,
    pub estimated: Trajectory,
    pub ground_truth: Trajectory,
    /// Estimated cloud after Sim(3) alignment to the ground truth.
    pub cloud: PointCloud,
    pub gt_cloud: PointCloud,
}

fn ate_of(graph: &CovisGraph, gt: &Trajectory) -> Result<f64> {
    let e = translation_errors(&estimated_trajectory(graph), gt, true, DEFAULT_MAX_GAP)?;
    Ok((e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).sqrt())
}

fn trace_row(
    iteration: usize,
    graph: &CovisGraph,
    scenario: &Scenario,
    gt: &Trajectory,
    cfg: &OuterConfig,
    extra: (f64, f64, usize, usize),
) -> Result<TraceRow> {
    let state = graph.state();
    let edges: Vec<BaEdge> = graph
        .edges
        .iter()
        .map(|e| BaEdge {
            i: e.i,
            j: e.j,
            flow: &e.flow,
        })
        .collect();
    let cost = total_cost(&state, &edges, &graph.k, &cfg.ba);
    let total: usize = graph.edges.iter().map(|e| e.mask.m.len()).sum();
    let reliable: usize = graph.edges.iter().map(|e| e.mask.m.count_true()).sum();
    let (flow_epe, restored) = scenario.flow_errors(graph);
    Ok(TraceRow {
        iteration,
        cost,
        ate: ate_of(graph, gt)?,
        reliable_fraction: reliable as f64 / total.max(1) as f64,
        mean_flow_update: extra.0,
        flow_epe,
        restored,
        ba_accepted: extra.2,
        ba_rejected: extra.3,
    })
}

/// Runs the outer loop on a prepared scenario. Nothing is written to disk.
pub fn run_scenario(cfg: &ExperimentConfig, scenario: &Scenario) -> Result<RunReport> {
    let outer = cfg.outer();
    let start = Instant::now();
    let mut graph = scenario.graph()?;
    graph.refresh(&outer)?;
    let gt = scenario.gt_trajectory();
    let mut timings = Timings {
        setup_s: start.elapsed().as_secs_f64(),
        ..Timings::default()
    };
    let mut trace = vec![trace_row(0, &graph, scenario, &gt, &outer, (0.0, 0.0, 0, 0))?];
    for it in 1..=cfg.iterations {
        let t0 = Instant::now();
        let step = graph.outer_iteration(&outer)?;
        timings.iterations_s.push(t0.elapsed().as_secs_f64());
        let extra = (
            step.mean_flow_update,
            step.reliable_fraction,
            step.ba.accepted,
            step.ba.rejected,
        );
        trace.push(trace_row(it, &graph, scenario, &gt, &outer, extra)?);
    }
    let t0 = Instant::now();
    let estimated = estimated_trajectory(&graph);
    let sim = align_poses(&estimated, &gt, true)?;
    let errors = translation_errors(&estimated, &gt, true, DEFAULT_MAX_GAP)?;
    let ate = (errors.iter().map(|x| x * x).sum::<f64>() / errors.len() as f64).sqrt();
    let cloud = estimated_cloud(&graph, &sim);
    let gt_cloud = scenario.gt_cloud();
    let cloud_m = cloud_metrics(&cloud, &gt_cloud, cfg.clip)?;
    let depth_error = graph
        .nodes
        .iter()
        .zip(&scenario.views)
        .map(|(n, v)| mean_relative_depth_error(&n.depth, &v.depth, sim.scale, Some(&v.valid)))
        .sum::<f64>()
        / graph.nodes.len() as f64;
    let metrics = FinalMetrics {
        ate,
        auc: auc(&errors, &default_thresholds()),
        cloud: cloud_m,
        depth_error,
        restored: trace.last().map_or(1.0, |r| r.restored),
    };
    timings.evaluation_s = t0.elapsed().as_secs_f64();
    let finite = [ate, metrics.auc, cloud_m.chamfer, depth_error].iter().all(|x| x.is_finite());
    if !finite {
        return Err(Error::Config("run produced non-finite metrics".into()));
    }
    Ok(RunReport {
        config: cfg.clone(),
        trace,
        metrics,
        timings,
        estimated,
        ground_truth: gt,
        cloud,
        gt_cloud,
    })
}

/// Builds the scenario and runs it.
pub fn run_in_memory(cfg: &ExperimentConfig) -> Result<RunReport> {
    let scenario = Scenario::build(cfg)?;
    run_scenario(cfg, &scenario)
}

fn num(x: f64) -> String {
    format!("{x:.9e}")
}

pub const TRACE_HEADER: &str =
    "iteration,cost,ate,reliable_fraction,mean_flow_update,flow_epe,restored,ba_accepted,ba_rejected";
pub const METRICS_HEADER: &str = "ate,auc,accuracy,completion,chamfer,depth_error,restored";
pub const ABLATION_HEADER: &str = "bi_ba,m_node,m_edge,runs,ate,accuracy,completion,chamfer";

impl RunReport {
    pub fn trace_csv(&self) -> String {
        let mut s = format!("{TRACE_HEADER}\n");
        for r in &self.trace {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.iteration,
                num(r.cost),
                num(r.ate),
                num(r.reliable_fraction),
                num(r.mean_flow_update),
                num(r.flow_epe),
                num(r.restored),
                r.ba_accepted,
                r.ba_rejected
            );
        }
        s
    }

    pub fn metrics_csv(&self) -> String {
        let m = &self.metrics;
        format!(
            "{METRICS_HEADER}\n{},{},{},{},{},{},{}\n",
            num(m.ate),
            num(m.auc),
            num(m.cloud.accuracy),
            num(m.cloud.completion),
            num(m.cloud.chamfer),
            num(m.depth_error),
            num(m.restored)
        )
    }

    /// Whitespace-separated trace for gnuplot.
    pub fn trace_dat(&self) -> String {
        let mut s = format!("# {}\n", TRACE_HEADER.replace(',', " "));
        for r in &self.trace {
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {} {} {}",
                r.iteration,
                num(r.cost),
                num(r.ate),
                num(r.reliable_fraction),
                num(r.mean_flow_update),
                num(r.flow_epe),
                num(r.restored),
                r.ba_accepted,
                r.ba_rejected
            );
        }
        s
    }

    pub fn summary(&self) -> String {
        let c = &self.config;
        let m = &self.metrics;
        let t = &self.timings;
        let iter_total: f64 = t.iterations_s.iter().sum();
        let mut s = String::new();
        let _ = writeln!(s, "scene        {} / {}", c.scene, c.trajectory);
        let _ = writeln!(s, "frames       {}  edges {}", c.frames, build_edges(c.frames, c.edges).len());
        let _ = writeln!(s, "seed         {}", c.seed);
        let _ = writeln!(
            s,
            "ablation     bi_ba={} m_node={} m_edge={}",
            c.ba.bi_ba, c.reliability.use_node, c.reliability.use_edge
        );
        let _ = writeln!(s, "ATE          {:.6e} m", m.ate);
        let _ = writeln!(s, "AUC          {:.3}", m.auc);
        let _ = writeln!(
            s,
            "cloud        acc {:.5} comp {:.5} chamfer {:.5}",
            m.cloud.accuracy, m.cloud.completion, m.cloud.chamfer
        );
        let _ = writeln!(s, "depth error  {:.6e}", m.depth_error);
        let _ = writeln!(s, "restored     {:.4}", m.restored);
        let _ = writeln!(s, "setup        {:.3} s", t.setup_s);
        let _ = writeln!(
            s,
            "iterations   {} in {:.3} s ({:.1} ms each)",
            t.iterations_s.len(),
            iter_total,
            1e3 * iter_total / t.iterations_s.len().max(1) as f64
        );
        let _ = writeln!(s, "evaluation   {:.3} s", t.evaluation_s);
        s
    }

    /// Writes every artifact into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(p, e))
        };
        put("trace.csv", self.trace_csv())?;
        put("metrics.csv", self.metrics_csv())?;
        put("trace.dat", self.trace_dat())?;
        put("config.toml", self.config.to_toml())?;
        put("summary.txt", self.summary())?;
        write_trajectory(&self.estimated, &dir.join("trajectory_est.txt"))?;
        write_trajectory(&self.ground_truth, &dir.join("trajectory_gt.txt"))?;
        export_ply(&self.cloud, &dir.join("cloud_est.ply"))?;
        export_ply(&self.gt_cloud, &dir.join("cloud_gt.ply"))?;
        Ok(())
    }
}

/// Runs the experiment and writes its artifacts to `dir`.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<RunReport> {
    let report = run_in_memory(cfg)?;
    report.write(dir)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub setting: Ablation,
    pub runs: usize,
    /// Medians over the seeds.
    pub ate: f64,
    pub accuracy: f64,
    pub completion: f64,
    pub chamfer: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Eight rows, one per switch setting, with medians over `seeds`
/// consecutive seeds starting at `cfg.seed`.
pub fn ablate(cfg: &ExperimentConfig, seeds: usize) -> Result<Vec<AblationRow>> {
    ablate_settings(cfg, seeds, &Ablation::grid())
}

/// Like [`ablate`] restricted to `settings`, in the given order.
pub fn ablate_settings(cfg: &ExperimentConfig, seeds: usize, settings: &[Ablation]) -> Result<Vec<AblationRow>> {
    if seeds == 0 {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let scenarios: Vec<Scenario> = (0..seeds as u64)
        .map(|s| {
            let mut c = cfg.clone();
            c.seed = cfg.seed + s;
            Scenario::build(&c)
        })
        .collect::<Result<_>>()?;
    settings
        .iter()
        .map(|&setting| {
            let mut runs = Vec::with_capacity(seeds);
            for (s, scenario) in scenarios.iter().enumerate() {
                let mut c = cfg.clone().with_ablation(setting);
                c.seed = cfg.seed + s as u64;
                runs.push(run_scenario(&c, scenario)?.metrics);
            }
            Ok(AblationRow {
                setting,
                runs: seeds,
                ate: median(runs.iter().map(|m| m.ate).collect()),
                accuracy: median(runs.iter().map(|m| m.cloud.accuracy).collect()),
                completion: median(runs.iter().map(|m| m.cloud.completion).collect()),
                chamfer: median(runs.iter().map(|m| m.cloud.chamfer).collect()),
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.setting.bi_ba as u8,
            r.setting.m_node as u8,
            r.setting.m_edge as u8,
            r.runs,
            num(r.ate),
            num(r.accuracy),
            num(r.completion),
            num(r.chamfer)
        );
    }
    s
}

/// Ground-truth artifacts of a scene: trajectory, per-frame clouds and the
/// merged cloud.
pub fn write_synth(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    cfg.validate()?;
    let k = Intrinsics::working();
    let scene = cfg.scene.build(cfg.trajectory, cfg.frames, k, cfg.seed);
    scene.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_trajectory(&Trajectory::uniform(scene.trajectory.clone(), 1.0), &dir.join("trajectory_gt.txt"))?;
    let mut all = PointCloud::default();
    for (f, pose) in scene.trajectory.iter().enumerate() {
        let view = scene.render(pose, f);
        let cloud = depth_cloud(pose, &view.depth, &k, Some(&view.valid));
        export_ply(&cloud, &dir.join(format!("depth_{f:03}.ply")))?;
        all.extend(cloud);
    }
    export_ply(&all, &dir.join("cloud_gt.ply"))
}


#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> ExperimentConfig {
        ExperimentConfig {
            frames: 4,
            iterations: 2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(ExperimentConfig::from_toml("sede = 3\n"), Err(Error::Config(_))));
        assert!(matches!(
            ExperimentConfig::from_toml("[ba]\nlambda = 1.0\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(ExperimentConfig::from_toml("scene = \"cube\"\n"), Err(Error::Config(_))));
        let c = ExperimentConfig::from_toml("seed = 3\nscene = \"plane\"\n[edges]\nkind = \"batch\"\nwindow = 1\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.edges, EdgePattern::Batch { window: 1 });
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = quick().with_ablation(Ablation::BASELINE);
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut c = quick();
        c.reliability.tau_edge = 0.0;
        assert!(c.validate().is_err());
        let mut c = quick();
        c.frames = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn grid_has_eight_distinct_settings() {
        let g = Ablation::grid();
        assert_eq!(g.len(), 8);
        assert_eq!(g[0], Ablation::BASELINE);
        assert_eq!(g[7], Ablation::FULL);
    }

    #[test]
    fn perturbation_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Pose::exp(&Twist::new(Vector3::new(0.1, 0.2, 0.0), Vector3::new(0.3, 0.0, 1.0)));
        for _ in 0..200 {
            let q = perturb_pose(&p, 2f64.to_radians(), 0.02, &mut rng);
            let dr = q.compose(&p.inverse()).rotation_angle();
            assert!(dr <= 2f64.to_radians() + 1e-12);
            assert!((q.center() - p.center()).norm() <= 0.02 + 1e-12);
        }
    }

    #[test]
    fn output_dir_precedence() {
        let mut c = quick();
        assert_eq!(c.resolve_output_dir(Some(Path::new("cli"))), PathBuf::from("cli"));
        c.output_dir = Some(PathBuf::from("cfg"));
        assert_eq!(c.resolve_output_dir(None), PathBuf::from("cfg"));
    }
}
