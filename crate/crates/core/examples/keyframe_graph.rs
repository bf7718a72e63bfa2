//! The outer loop on a covisibility graph: refine flows, two BA steps,
//! refresh residuals and masks.

use bcba::experiment::{estimated_trajectory, ExperimentConfig, Scenario};
use bcba::metrics::ate_rmse;

fn main() -> bcba::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.corruption.depth_prior_noise = 0.05;
    cfg.corruption.random_patch_fraction = 0.05;
    cfg.corruption.occlusion = true;
    let s = Scenario::build(&cfg)?;
    let mut g = s.graph()?;
    let outer = cfg.outer();
    g.refresh(&outer)?;
    g.check_invariants()?;
    println!("{} keyframes, {} edges", g.nodes.len(), g.edges.len());
    let gt = s.gt_trajectory();
    for it in 1..=cfg.iterations {
        let t = g.outer_iteration(&outer)?;
        let ate = ate_rmse(&estimated_trajectory(&g), &gt, true)?;
        let (epe, restored) = s.flow_errors(&g);
        println!(
            "iter {it}: cost {:.3e}, reliable {:.3}, flow update {:.3} px, EPE {epe:.3} px, restored {restored:.3}, ATE {ate:.2e} m",
            t.ba.final_cost(),
            t.reliable_fraction,
            t.mean_flow_update
        );
    }
    Ok(())
}
