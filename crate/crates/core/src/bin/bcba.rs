use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use bcba::experiment::{ablate, ablation_csv, run_experiment, write_synth, ExperimentConfig};
use bcba::io::{read_ply, read_trajectory};
use bcba::metrics::{auc, cloud_metrics, default_thresholds, translation_errors, DEFAULT_CLIP, DEFAULT_MAX_GAP};
use bcba::synth::ScenePreset;
use bcba::Error;

#[derive(Parser)]
#[command(name = "bcba", version, about = "Bi-consistent dense bundle adjustment on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its report.
    Run(RunArgs),
    /// ATE and AUC of an estimated trajectory file against ground truth.
    EvalTraj {
        estimate: PathBuf,
        ground_truth: PathBuf,
        /// Rigid instead of similarity alignment.
        #[arg(long)]
        no_scale: bool,
        /// Largest timestamp difference for association, seconds.
        #[arg(long, default_value_t = DEFAULT_MAX_GAP)]
        max_gap: f64,
    },
    /// Accuracy, completion and chamfer distance of two PLY clouds.
    EvalCloud {
        estimate: PathBuf,
        ground_truth: PathBuf,
        /// Nearest-neighbor distances are clipped at this value, meters.
        #[arg(long, default_value_t = DEFAULT_CLIP)]
        clip: f64,
    },
    /// Run the 8-setting component grid over several seeds.
    Ablate {
        #[command(flatten)]
        common: RunArgs,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
    /// Write the ground-truth trajectory, depth clouds and scene cloud.
    Synth(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment file; defaults apply to missing keys.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config and BCBA_OUTPUT_DIR).
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    /// plane, plane_card, plane_sphere or height_field.
    #[arg(long)]
    scene: Option<String>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.iterations {
            cfg.iterations = n;
        }
        if let Some(n) = self.frames {
            cfg.frames = n;
        }
        if let Some(s) = &self.scene {
            cfg.scene = s.parse::<ScenePreset>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        cfg.resolve_output_dir(self.out.as_deref())
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn execute(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Run(args) => {
            let cfg = args.config()?;
            let dir = args.out_dir(&cfg);
            create_dir(&dir)?;
            let report = run_experiment(&cfg, &dir)?;
            print!("{}", report.summary());
            println!("wrote {}", dir.display());
        }
        Command::EvalTraj {
            estimate,
            ground_truth,
            no_scale,
            max_gap,
        } => {
            let est = read_trajectory(&estimate)?;
            let gt = read_trajectory(&ground_truth)?;
            let errors = translation_errors(&est, &gt, !no_scale, max_gap)?;
            let ate = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
            println!("pairs {}", errors.len());
            println!("ate_rmse {ate:.9e}");
            println!("auc {:.9e}", auc(&errors, &default_thresholds()));
        }
        Command::EvalCloud {
            estimate,
            ground_truth,
            clip,
        } => {
            if !(clip > 0.0) {
                return Err(Error::Config("clip must be positive".into()));
            }
            let m = cloud_metrics(&read_ply(&estimate)?, &read_ply(&ground_truth)?, clip)?;
            println!("accuracy {:.9e}", m.accuracy);
            println!("completion {:.9e}", m.completion);
            println!("chamfer {:.9e}", m.chamfer);
        }
        Command::Ablate { common, seeds } => {
            if seeds == 0 {
                return Err(Error::Config("seeds must be positive".into()));
            }
            let cfg = common.config()?;
            let dir = common.out_dir(&cfg);
            create_dir(&dir)?;
            let rows = ablate(&cfg, seeds)?;
            let csv = ablation_csv(&rows);
            let path = dir.join("ablation.csv");
            fs::write(&path, &csv).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            print!("{csv}");
            println!("wrote {}", path.display());
        }
        Command::Synth(args) => {
            let cfg = args.config()?;
            let dir = args.out_dir(&cfg);
            create_dir(&dir)?;
            write_synth(&cfg, &dir)?;
            println!("wrote {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            eprint!("{e}");
            eprintln!("error[E_USAGE]: missing command");
            return ExitCode::from(1);
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[E_USAGE]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.code());
            // Bad configuration is the caller's mistake, like a bad flag.
            if matches!(e, Error::Config(_) | Error::UnknownPreset(_)) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
