use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use fsbm_cli::commands::{
    cmd_eval, cmd_generate_keypoints, cmd_plot, cmd_simulate, cmd_train, format_summary_table,
};
use fsbm_cli::config::RunConfig;

/// Semi-supervised distribution transport: train a drift field between two
/// distributions with a handful of aligned keypoint pairs steering the
/// bridges, then simulate and evaluate it.
#[derive(Parser)]
#[command(name = "fsbm", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration TOML.
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize aligned keypoint pairs with obstacle-aware trajectories.
    GenerateKeypoints {
        #[command(flatten)]
        config: ConfigArg,
        /// Output file (default: guidance.keypoint_file or <scene>_keypoints.txt).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of keypoint pairs (default: scene-specific).
        #[arg(long)]
        n_keypoints: Option<usize>,
        /// Master seed (overrides training.seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train forward/backward drift networks by alternating bridge matching.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Master seed (overrides training.seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Override training.epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override guidance.alpha.
        #[arg(long)]
        alpha: Option<f64>,
        /// Override the run directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Override guidance.keypoint_file.
        #[arg(long)]
        keypoint_file: Option<PathBuf>,
    },
    /// Re-evaluate a trained run directory (metrics, CSV, SVG).
    Eval {
        /// Run directory produced by `fsbm train`.
        #[arg(long)]
        run_dir: PathBuf,
        /// Checkpoint to evaluate (default: <run_dir>/forward.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Initial condition override (vanilla, perturbed_mean, perturbed_std, uniform).
        #[arg(long)]
        initial_condition: Option<String>,
        /// Evaluation particle count override.
        #[arg(long)]
        n_eval: Option<usize>,
    },
    /// Simulate the scene's uncontrolled reference dynamics to CSV.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        /// Master seed (overrides training.seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Particle count (default: eval.n_eval).
        #[arg(long)]
        n: Option<usize>,
        /// Output CSV (default: <scene>_reference.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a snapshot CSV as an SVG scatter with the scene's obstacles.
    Plot {
        #[command(flatten)]
        config: ConfigArg,
        /// Snapshot CSV produced by eval or simulate.
        #[arg(long)]
        csv: PathBuf,
        /// Output SVG (default: CSV path with .svg extension).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenerateKeypoints { config, out, n_keypoints, seed } => {
            let cfg = RunConfig::load(&config.config)?;
            let s = cmd_generate_keypoints(&cfg, out, n_keypoints, seed)?;
            println!(
                "wrote {} keypoint pairs to {}",
                s.n_keypoints,
                s.path.display()
            );
            println!("mean squared pair distance: {:.4}", s.mean_pair_cost);
            println!("max trajectory obstacle cost: {:.6}", s.max_obstacle_cost);
        }
        Cmd::Train { config, seed, epochs, alpha, output_dir, keypoint_file } => {
            let mut cfg = RunConfig::load(&config.config)?;
            if let Some(epochs) = epochs {
                cfg.training.epochs = epochs;
            }
            if let Some(alpha) = alpha {
                cfg.guidance.alpha = alpha;
            }
            if let Some(dir) = output_dir {
                cfg.output_dir = Some(dir);
            }
            if let Some(kp) = keypoint_file {
                cfg.guidance.keypoint_file = Some(kp);
            }
            cfg.validate()?;
            let outcome = cmd_train(&cfg, seed)?;
            println!(
                "trained {} epochs; artifacts in {}",
                outcome.epochs_run,
                outcome.run_dir.display()
            );
            print!("{}", format_summary_table(&outcome.summary));
        }
        Cmd::Eval { run_dir, checkpoint, initial_condition, n_eval } => {
            let outcome = cmd_eval(&run_dir, checkpoint, initial_condition, n_eval)?;
            println!(
                "evaluated {} particles under '{}' (seed {}, eval tag {})",
                outcome.n_eval, outcome.initial_condition, outcome.seed, outcome.tag
            );
            if let Some(w2) = outcome.w2 {
                println!("w2: {w2:.6}");
            }
            if let Some(kl) = outcome.knn_kl {
                println!("knn_kl: {kl:.6}");
            }
            if let Some(matches) = outcome.matches_log {
                println!(
                    "reproduces logged epoch-{} metrics exactly: {}",
                    outcome.tag, matches
                );
            }
            println!("snapshots: {}", outcome.csv.display());
            println!("plot: {}", outcome.svg.display());
        }
        Cmd::Simulate { config, seed, n, out } => {
            let cfg = RunConfig::load(&config.config)?;
            let s = cmd_simulate(&cfg, seed, n, out)?;
            let mean = s
                .terminal_mean
                .iter()
                .map(|v| format!("{v:.3}"))
                .collect::<Vec<_>>()
                .join(", ");
            println!(
                "simulated {} particles; snapshots in {}",
                s.n_particles,
                s.csv.display()
            );
            println!("terminal mean: [{mean}]");
        }
        Cmd::Plot { config, csv, out } => {
            let cfg = RunConfig::load(&config.config)?;
            let path = cmd_plot(&cfg, &csv, out)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
