//! Edge and node masks against a known patch corruption.

use bcba::experiment::{ExperimentConfig, InitPerturbation};
use bcba::experiment::Scenario;
use bcba::synth::{Patch, ScenePreset};

fn main() -> bcba::Result<()> {
    let mut cfg = ExperimentConfig {
        scene: ScenePreset::PlaneCard,
        init: InitPerturbation {
            rotation_deg: 0.0,
            translation_m: 0.0,
        },
        ..Default::default()
    };
    cfg.corruption.patches.push(Patch {
        x: 20,
        y: 16,
        w: 12,
        h: 10,
        offset: [9.0, -4.0],
    });
    let scenario = Scenario::build(&cfg)?;
    let mut g = scenario.graph()?;
    g.refresh(&cfg.outer())?;
    for (e, s) in g.edges.iter().zip(&scenario.edges).take(4) {
        let flagged = e.mask.m_edge.iter().filter(|&&m| !m).count();
        let hit = e.mask.m_edge.iter().zip(s.corrupted.iter()).filter(|(&m, &c)| !m && c).count();
        println!(
            "edge {}->{}: {} corrupted, m_edge flags {flagged} ({hit} of them corrupted), m_node rejects {}, m keeps {:.1}%",
            e.i,
            e.j,
            s.corrupted.count_true(),
            e.mask.m_node.iter().filter(|&&m| !m).count(),
            100.0 * e.mask.reliable_fraction()
        );
    }
    Ok(())
}
