//! Config, trajectory and PLY files through a scratch directory.

use bcba::experiment::{ExperimentConfig, Scenario};
use bcba::io::{export_ply, read_ply, read_trajectory, write_trajectory};

fn main() -> bcba::Result<()> {
    let dir = std::env::temp_dir().join(format!("bcba-config-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| bcba::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let cfg = ExperimentConfig {
        frames: 4,
        ..Default::default()
    };
    let text = cfg.to_toml();
    println!("{}", text.lines().take(8).collect::<Vec<_>>().join("\n"));
    assert_eq!(ExperimentConfig::from_toml(&text)?, cfg);

    let s = Scenario::build(&cfg)?;
    let traj_path = dir.join("trajectory_gt.txt");
    write_trajectory(&s.gt_trajectory(), &traj_path)?;
    let back = read_trajectory(&traj_path)?;
    println!("trajectory: wrote and read {} poses", back.len());

    let cloud_path = dir.join("cloud_gt.ply");
    export_ply(&s.gt_cloud(), &cloud_path)?;
    println!("cloud: wrote and read {} points", read_ply(&cloud_path)?.len());

    match ExperimentConfig::from_toml("frames = 2\nspeed = 3\n") {
        Ok(_) => println!("unexpected: unknown key accepted"),
        Err(e) => println!("[{}] {e}", e.code()),
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
