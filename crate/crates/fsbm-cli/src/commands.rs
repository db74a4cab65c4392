//! Subcommand implementations. Each returns structured results so the
//! integration tests can drive them directly; `main` only parses flags and
//! prints.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use fsbm_core::driftnet::{load_checkpoint, DriftNetwork};
use fsbm_core::guidance::KeypointSet;
use fsbm_core::matching::{evaluate_forward, run_fsbm, simulate_forward, EpochMetrics};
use fsbm_core::rng::{substream, Domain};
use fsbm_core::scenes::{generate_keypoints, InitialCondition, KeypointGenOpts, Scene};

use crate::artifacts::{write_svg, write_trajectory_csv, SnapshotSet};
use crate::config::{parse_initial_condition, RunConfig};
use crate::keypoint_io::write_keypoints;

/// Eval substream tags: per-epoch evaluation uses the epoch number, the
/// final per-initial-condition summary and the reference simulator use
/// disjoint high ranges.
const SUMMARY_TAG_BASE: u64 = 1_000_000;
const SIMULATE_TAG: u64 = 3_000_000;

#[derive(Debug)]
pub struct KeypointSummary {
    pub path: PathBuf,
    pub n_keypoints: usize,
    pub mean_pair_cost: f64,
    pub max_obstacle_cost: f64,
}

/// Synthesizes a keypoint set for the configured scene and writes it.
pub fn cmd_generate_keypoints(
    cfg: &RunConfig,
    out: Option<PathBuf>,
    n_keypoints: Option<usize>,
    seed_flag: Option<u64>,
) -> Result<KeypointSummary> {
    let seed = cfg.require_seed(seed_flag)?;
    let scene = cfg.build_scene()?;
    let n = n_keypoints.unwrap_or_else(|| cfg.n_keypoints());
    if n == 0 {
        bail!("n_keypoints must be >= 1");
    }
    let opts = KeypointGenOpts::for_scene(&scene);
    let ks = generate_keypoints(&scene, n, &opts, seed)?;
    let path = out
        .or_else(|| cfg.guidance.keypoint_file.clone())
        .unwrap_or_else(|| PathBuf::from(format!("{}_keypoints.txt", scene.name())));
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_keypoints(&ks, &path)?;

    let mut mean_pair_cost = 0.0;
    for (src, tgt) in ks
        .source_points()
        .rows()
        .into_iter()
        .zip(ks.target_points().rows())
    {
        let diff = &src.to_owned() - &tgt;
        mean_pair_cost += diff.dot(&diff);
    }
    mean_pair_cost /= n as f64;
    let mut max_obstacle_cost: f64 = 0.0;
    if !scene.obstacles().is_empty() {
        let (kp_count, t_count, _) = ks.trajectories().dim();
        for i in 0..kp_count {
            for k in 0..t_count {
                let point = ks.trajectories().index_axis(ndarray::Axis(0), i);
                let cost = scene.obstacle_cost(point.index_axis(ndarray::Axis(0), k))?;
                max_obstacle_cost = max_obstacle_cost.max(cost);
            }
        }
    }
    Ok(KeypointSummary { path, n_keypoints: n, mean_pair_cost, max_obstacle_cost })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub initial_condition: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knn_kl: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub epochs_run: usize,
    pub summary: Vec<SummaryRow>,
}

/// Trains per the (flag-merged) config, persists the run directory, and
/// evaluates the final forward network under every initial condition the
/// scene supports.
pub fn cmd_train(cfg: &RunConfig, seed_flag: Option<u64>) -> Result<TrainOutcome> {
    let seed = cfg.require_seed(seed_flag)?;
    let scene = cfg.build_scene()?;
    let guidance = cfg.load_guidance(&scene)?;
    let match_cfg = cfg.match_config(seed);
    let run_dir = cfg
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{seed}", scene.name())));
    std::fs::create_dir_all(&run_dir)
        .with_context(|| format!("creating run directory {}", run_dir.display()))?;

    // Snapshot the fully resolved config (seed inlined) so the run directory
    // is self-describing: eval rebuilds everything from this file alone.
    let mut resolved = cfg.clone();
    resolved.training.seed = Some(seed);
    resolved.output_dir = Some(run_dir.clone());
    std::fs::write(
        run_dir.join("config.toml"),
        toml::to_string_pretty(&resolved).context("serializing resolved config")?,
    )?;

    let state = run_fsbm(&scene, guidance.as_ref(), &match_cfg, Some(&run_dir))?;

    let mut summary = Vec::new();
    for (idx, ic) in InitialCondition::ALL.iter().enumerate() {
        let Ok(sampler) = ic.source_sampler(&scene) else {
            continue;
        };
        let report = evaluate_forward(
            &state.forward_net,
            &scene,
            &sampler,
            cfg.eval.n_eval,
            cfg.training.sde_steps,
            seed,
            SUMMARY_TAG_BASE + idx as u64,
        )?;
        summary.push(SummaryRow {
            initial_condition: ic.label().to_string(),
            w2: metric_enabled(cfg, "w2").then_some(report.w2),
            knn_kl: metric_enabled(cfg, "knn_kl").then_some(report.knn_kl),
        });
    }
    let summary_json = serde_json::to_string_pretty(&summary).context("serializing summary")?;
    std::fs::write(run_dir.join("summary.json"), summary_json + "\n")?;
    Ok(TrainOutcome { run_dir, epochs_run: state.epoch, summary })
}

fn metric_enabled(cfg: &RunConfig, name: &str) -> bool {
    cfg.eval.metrics.iter().any(|m| m == name)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub initial_condition: String,
    pub n_eval: usize,
    pub seed: u64,
    /// Eval substream tag (the epoch whose logged metrics are comparable).
    pub tag: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knn_kl: Option<f64>,
    /// Metrics of the training log's last epoch, when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logged_w2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logged_knn_kl: Option<f64>,
    /// Whether this re-evaluation reproduced the logged metrics exactly
    /// (only checked when the eval settings match the training-time ones).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matches_log: Option<bool>,
    pub csv: PathBuf,
    pub svg: PathBuf,
}

/// Re-evaluates a trained checkpoint from its self-describing run directory
/// and emits metrics, a snapshot CSV, and an SVG scatter.
pub fn cmd_eval(
    run_dir: &Path,
    checkpoint: Option<PathBuf>,
    initial_condition: Option<String>,
    n_eval_flag: Option<usize>,
) -> Result<EvalOutcome> {
    let cfg = RunConfig::load(&run_dir.join("config.toml"))?;
    let seed = cfg.require_seed(None)?;
    let scene = cfg.build_scene()?;
    let ckpt_path = checkpoint.unwrap_or_else(|| run_dir.join("forward.ckpt"));
    let net = load_checkpoint(&ckpt_path)
        .with_context(|| format!("loading checkpoint {}", ckpt_path.display()))?;
    if net.input_dim() != scene.dim() {
        bail!(
            "checkpoint {} drives a {}-dimensional state but scene '{}' is {}-dimensional",
            ckpt_path.display(),
            net.input_dim(),
            scene.name(),
            scene.dim()
        );
    }

    let last_logged = read_last_metrics(&run_dir.join("metrics.jsonl"))?;
    let tag = last_logged.as_ref().map_or(0, |m| m.epoch as u64);
    let ic_label = initial_condition.unwrap_or_else(|| cfg.eval.initial_condition.clone());
    let ic = parse_initial_condition(&ic_label)?;
    let sampler = ic.source_sampler(&scene)?;
    let n_eval = n_eval_flag.unwrap_or(cfg.eval.n_eval);

    let report = evaluate_forward(
        &net,
        &scene,
        &sampler,
        n_eval,
        cfg.training.sde_steps,
        seed,
        tag,
    )?;

    // The per-epoch training eval used the vanilla source sampler and this
    // exact (seed, tag, n_eval); under those settings the numbers must agree
    // to the last bit.
    let comparable = ic == InitialCondition::Vanilla
        && n_eval == cfg.eval.n_eval
        && last_logged.is_some();
    let matches_log = comparable.then(|| {
        let logged = last_logged.as_ref().unwrap();
        logged.w2 == report.w2 && logged.knn_kl == report.knn_kl
    });

    let snapshots = SnapshotSet::from_trajectory(report.trajectory.view());
    let csv = run_dir.join(format!("eval_{}.csv", ic.label()));
    let svg = run_dir.join(format!("eval_{}.svg", ic.label()));
    write_trajectory_csv(&snapshots, &csv)?;
    write_svg(&snapshots, scene.obstacles(), &svg)?;

    let outcome = EvalOutcome {
        initial_condition: ic.label().to_string(),
        n_eval,
        seed,
        tag,
        w2: metric_enabled(&cfg, "w2").then_some(report.w2),
        knn_kl: metric_enabled(&cfg, "knn_kl").then_some(report.knn_kl),
        logged_w2: last_logged.as_ref().map(|m| m.w2),
        logged_knn_kl: last_logged.as_ref().map(|m| m.knn_kl),
        matches_log,
        csv,
        svg,
    };
    let json = serde_json::to_string_pretty(&outcome).context("serializing eval metrics")?;
    std::fs::write(run_dir.join(format!("eval_{}.json", ic.label())), json + "\n")?;
    Ok(outcome)
}

fn read_last_metrics(path: &Path) -> Result<Option<EpochMetrics>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)?;
    let Some(line) = text.lines().rev().find(|l| !l.trim().is_empty()) else {
        return Ok(None);
    };
    let record: EpochMetrics = serde_json::from_str(line)
        .with_context(|| format!("parsing last record of {}", path.display()))?;
    Ok(Some(record))
}

#[derive(Debug)]
pub struct SimulateOutcome {
    pub csv: PathBuf,
    pub n_particles: usize,
    pub terminal_mean: Vec<f64>,
}

/// Simulates the scene's reference dynamics (no learned control: pure
/// diffusion, plus the polarizing field in the opinion scene) and dumps
/// snapshot CSV rows.
pub fn cmd_simulate(
    cfg: &RunConfig,
    seed_flag: Option<u64>,
    n_flag: Option<usize>,
    out: Option<PathBuf>,
) -> Result<SimulateOutcome> {
    let seed = cfg.require_seed(seed_flag)?;
    let scene = cfg.build_scene()?;
    let n = n_flag.unwrap_or(cfg.eval.n_eval);
    let sampler = cfg.initial_condition()?.source_sampler(&scene)?;
    // A fresh network's output head is zero, so it contributes no drift.
    let mut net_rng = substream(seed, Domain::Init, 2, 0);
    let net = DriftNetwork::new(scene.dim(), 2, 1, 1, &mut net_rng)?;
    let mut init_rng = substream(seed, Domain::Eval, SIMULATE_TAG, 0);
    let mut noise_rng = substream(seed, Domain::Eval, SIMULATE_TAG, 1);
    let mut xi_rng = substream(seed, Domain::Eval, SIMULATE_TAG, 2);
    let x0 = sampler.sample(n, &mut init_rng);
    let traj = simulate_forward(
        &net,
        &scene,
        x0.view(),
        cfg.training.sde_steps,
        &mut noise_rng,
        &mut xi_rng,
    )?;
    let snapshots = SnapshotSet::from_trajectory(traj.view());
    let csv = out.unwrap_or_else(|| PathBuf::from(format!("{}_reference.csv", scene.name())));
    write_trajectory_csv(&snapshots, &csv)?;
    let terminal = snapshots.points.last().expect("snapshots non-empty");
    let terminal_mean = (0..terminal.ncols())
        .map(|j| terminal.column(j).mean().unwrap_or(0.0))
        .collect();
    Ok(SimulateOutcome { csv, n_particles: n, terminal_mean })
}

/// Re-renders an SVG scatter from a previously dumped trajectory CSV.
pub fn cmd_plot(cfg: &RunConfig, csv: &Path, out: Option<PathBuf>) -> Result<PathBuf> {
    let scene = cfg.build_scene()?;
    let snapshots = crate::artifacts::read_trajectory_csv(csv)?;
    let out = out.unwrap_or_else(|| csv.with_extension("svg"));
    write_svg(&snapshots, scene.obstacles(), &out)?;
    Ok(out)
}

/// Formats the final per-initial-condition table printed after training.
pub fn format_summary_table(summary: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<18} {:>12} {:>12}\n", "initial condition", "W2", "kNN-KL"));
    for row in summary {
        let fmt = |v: Option<f64>| match v {
            Some(v) => format!("{v:.4}"),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{:<18} {:>12} {:>12}\n",
            row.initial_condition,
            fmt(row.w2),
            fmt(row.knn_kl)
        ));
    }
    out
}

/// Ensures a keypoint set read from disk matches the scene (used by tests
/// and kept next to the loaders for discoverability).
pub fn check_keypoints_match_scene(ks: &KeypointSet, scene: &Scene) -> Result<()> {
    if ks.dim() != scene.dim() {
        bail!(
            "keypoints are {}-dimensional but scene '{}' is {}-dimensional",
            ks.dim(),
            scene.name(),
            scene.dim()
        );
    }
    Ok(())
}
