//! One frontend pass: correlation where the mask trusts the flow, the depth
//! prior elsewhere.

use bcba::experiment::{ExperimentConfig, InitPerturbation, Scenario};
use bcba::frontend::{geometry_prior_flow, refine_edge, FrontendConfig};
use bcba::grid::Grid;
use bcba::synth::ScenePreset;

fn main() -> bcba::Result<()> {
    let mut cfg = ExperimentConfig {
        scene: ScenePreset::Plane,
        init: InitPerturbation {
            rotation_deg: 0.0,
            translation_m: 0.0,
        },
        ..Default::default()
    };
    cfg.corruption.flow_noise_sigma = 0.8;
    cfg.corruption.random_patch_fraction = 0.1;
    cfg.corruption.depth_prior_noise = 0.03;
    let s = Scenario::build(&cfg)?;
    let e = &s.edges[0];
    let k = s.intrinsics();
    let epe = |f: &bcba::residuals::FlowField| {
        let n = e.gt.in_view.count_true() as f64;
        f.flow
            .iter()
            .zip(e.gt.field.flow.iter())
            .zip(e.gt.in_view.iter())
            .filter(|(_, &v)| v)
            .map(|((a, b), _)| (a - b).norm())
            .sum::<f64>()
            / n
    };
    let t_ji = s.gt_poses[e.j].compose(&s.gt_poses[e.i].inverse());
    let (prior, prior_valid) = geometry_prior_flow(&s.priors[e.i], e.j, &t_ji, &k);
    // Trust everything except the corrupted patches.
    let m = e.corrupted.map(|&c| !c);
    let fcfg = FrontendConfig::default();
    let mut flow = e.flow.clone();
    println!("input: mean endpoint error {:.3} px", epe(&flow));
    let mut owned = Grid::filled(k.width, k.height, false);
    for it in 1..=3 {
        let r = refine_edge(&s.features[e.i], &s.features[e.j], &flow, &m, &owned, &prior, &prior_valid, &fcfg);
        (flow, owned) = (r.flow, r.prior_owned);
        println!("pass {it}: mean endpoint error {:.3} px", epe(&flow));
    }
    let all = Grid::filled(k.width, k.height, true);
    let blind = refine_edge(&s.features[e.i], &s.features[e.j], &e.flow, &all, &owned.map(|_| false), &prior, &prior_valid, &fcfg).flow;
    println!("without a mask, one pass: {:.3} px", epe(&blind));
    Ok(())
}
