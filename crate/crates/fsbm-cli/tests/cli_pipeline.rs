//! End-to-end command flows driven through the library API: train, eval,
//! simulate, and plot against self-describing run directories.

use std::path::Path;

use quick_xml::events::Event;
use quick_xml::Reader;

use fsbm_cli::artifacts::{read_trajectory_csv, render_svg, SNAPSHOT_FRACTIONS};
use fsbm_cli::commands::{cmd_eval, cmd_plot, cmd_simulate, cmd_train};
use fsbm_cli::config::{
    EvalConfig, GuidanceConfig, PathsConfig, RunConfig, SceneConfig, TrainingConfig,
};

/// A two-epoch V-neck run small enough to train in seconds.
fn tiny_config(run_dir: &Path) -> RunConfig {
    RunConfig {
        output_dir: Some(run_dir.to_path_buf()),
        scene: SceneConfig {
            name: "vneck".to_string(),
            dim: None,
            sigma: None,
            obstacles: None,
        },
        guidance: GuidanceConfig::default(),
        training: TrainingConfig {
            epochs: 2,
            pairs_per_epoch: 48,
            inner_steps: 30,
            lr: 2e-3,
            batch: 24,
            sde_steps: 25,
            seed: Some(11),
            hidden_dim: 16,
            n_blocks: 1,
            time_embed_dim: 4,
            ..TrainingConfig::default()
        },
        paths: PathsConfig {
            k_knots: 4,
            mc_times: 4,
            mc_samples: 4,
            spline_steps: 40,
            spline_lr: 0.05,
        },
        eval: EvalConfig {
            n_eval: 64,
            ..EvalConfig::default()
        },
    }
}

fn count_tag(svg: &str, tag: &[u8]) -> usize {
    let mut reader = Reader::from_str(svg);
    let mut count = 0;
    loop {
        match reader.read_event() {
            Ok(Event::Start(e)) | Ok(Event::Empty(e)) => {
                if e.name().as_ref() == tag {
                    count += 1;
                }
            }
            Ok(Event::Eof) => break,
            Ok(_) => {}
            Err(e) => panic!("SVG is not well-formed XML: {e}"),
        }
    }
    count
}

#[test]
fn train_writes_selfdescribing_run_and_eval_reproduces_logs() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let cfg = tiny_config(&run_dir);
    let outcome = cmd_train(&cfg, None).unwrap();
    assert_eq!(outcome.epochs_run, 2);
    assert_eq!(outcome.run_dir, run_dir);
    for artifact in [
        "config.toml",
        "metrics.jsonl",
        "timings.jsonl",
        "forward.ckpt",
        "backward.ckpt",
        "summary.json",
    ] {
        assert!(run_dir.join(artifact).exists(), "missing {artifact}");
    }
    // The crowd scenes support all four initial conditions.
    let labels: Vec<&str> = outcome
        .summary
        .iter()
        .map(|r| r.initial_condition.as_str())
        .collect();
    assert_eq!(labels, ["vanilla", "perturbed_mean", "perturbed_std", "uniform"]);

    // The run directory alone must suffice to re-evaluate, and under the
    // training-time settings the logged metrics must reproduce exactly.
    let eval = cmd_eval(&run_dir, None, None, None).unwrap();
    assert_eq!(eval.matches_log, Some(true), "eval failed to reproduce the training log");
    assert_eq!(eval.w2, eval.logged_w2);
    assert_eq!(eval.knn_kl, eval.logged_knn_kl);

    // Snapshot CSV: header plus one row per (snapshot, particle).
    let csv = std::fs::read_to_string(&eval.csv).unwrap();
    let rows = csv.lines().count();
    assert_eq!(rows, 1 + SNAPSHOT_FRACTIONS.len() * cfg.eval.n_eval);
    assert!(csv.starts_with("t,particle_id,x_0,x_1\n"));

    // SVG: well-formed XML, one circle per particle per panel, the V-neck's
    // two wedge polygons per panel.
    let svg = std::fs::read_to_string(&eval.svg).unwrap();
    let panels = SNAPSHOT_FRACTIONS.len();
    assert_eq!(count_tag(&svg, b"circle"), panels * cfg.eval.n_eval);
    assert_eq!(count_tag(&svg, b"polygon"), panels * 2);
}

#[test]
fn identical_configs_give_byte_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let run_a = dir.path().join("a");
    let run_b = dir.path().join("b");
    cmd_train(&tiny_config(&run_a), None).unwrap();
    cmd_train(&tiny_config(&run_b), None).unwrap();
    let metrics_a = std::fs::read(run_a.join("metrics.jsonl")).unwrap();
    let metrics_b = std::fs::read(run_b.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics_a, metrics_b, "metric logs differ between identical runs");
    let summary_a = std::fs::read(run_a.join("summary.json")).unwrap();
    let summary_b = std::fs::read(run_b.join("summary.json")).unwrap();
    assert_eq!(summary_a, summary_b, "summaries differ between identical runs");
}

#[test]
fn guided_config_without_keypoint_file_is_a_clear_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(&dir.path().join("run"));
    cfg.guidance.alpha = 0.7;
    let msg = format!("{:#}", cmd_train(&cfg, None).unwrap_err());
    assert!(msg.contains("keypoint"), "unhelpful error: {msg}");
    assert!(msg.contains("generate-keypoints"), "error should point at the generator: {msg}");

    cfg.guidance.keypoint_file = Some(dir.path().join("nope.txt"));
    let msg = format!("{:#}", cmd_train(&cfg, None).unwrap_err());
    assert!(msg.contains("does not exist"), "unhelpful error: {msg}");
}

#[test]
fn perturbed_mean_eval_shifts_only_the_start() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    cmd_train(&tiny_config(&run_dir), None).unwrap();

    let vanilla = cmd_eval(&run_dir, None, None, None).unwrap();
    let perturbed =
        cmd_eval(&run_dir, None, Some("perturbed_mean".to_string()), None).unwrap();
    assert_eq!(perturbed.matches_log, None, "off-config eval must not claim log parity");

    let start_mean = |csv: &Path| {
        let snaps = read_trajectory_csv(csv).unwrap();
        let first = &snaps.points[0];
        (
            first.column(0).mean().unwrap(),
            first.column(1).mean().unwrap(),
        )
    };
    let (vx, vy) = start_mean(&vanilla.csv);
    let (px, py) = start_mean(&perturbed.csv);
    // 64 draws of std 0.5 put the sample mean within ~0.25 of the true mean.
    assert!((vx + 11.0).abs() < 0.3 && (vy + 1.0).abs() < 0.3, "vanilla start ({vx}, {vy})");
    assert!((px + 11.0).abs() < 0.3 && (py + 4.0).abs() < 0.3, "perturbed start ({px}, {py})");
}

#[test]
fn simulate_emits_reference_snapshots_and_plot_is_pure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(&dir.path().join("run"));
    let csv_path = dir.path().join("ref.csv");
    let sim = cmd_simulate(&cfg, None, Some(40), Some(csv_path.clone())).unwrap();
    assert_eq!(sim.n_particles, 40);
    // The V-neck's reference dynamics are driftless diffusion, so the
    // terminal mean stays near the initial mean (-11, -1): std 1 over one
    // unit of time gives a standard error of 1/sqrt(40) ~ 0.16 per axis.
    assert!((sim.terminal_mean[0] + 11.0).abs() < 0.8, "x mean {}", sim.terminal_mean[0]);
    assert!((sim.terminal_mean[1] + 1.0).abs() < 0.8, "y mean {}", sim.terminal_mean[1]);

    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv.lines().count(), 1 + SNAPSHOT_FRACTIONS.len() * 40);

    // Plotting is a pure function of the CSV contents and the scene.
    let svg_path = dir.path().join("ref.svg");
    cmd_plot(&cfg, &csv_path, Some(svg_path.clone())).unwrap();
    let written = std::fs::read_to_string(&svg_path).unwrap();
    let scene = cfg.build_scene().unwrap();
    let direct = render_svg(&read_trajectory_csv(&csv_path).unwrap(), scene.obstacles());
    assert_eq!(written, direct, "plot output is not reproducible from the CSV");
}

#[test]
fn snapshot_times_land_on_exact_slices() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(&dir.path().join("run"));
    let csv_path = dir.path().join("ref.csv");
    cmd_simulate(&cfg, None, Some(10), Some(csv_path.clone())).unwrap();
    let snaps = read_trajectory_csv(&csv_path).unwrap();
    // sde_steps = 25: fractions {0, 1/3, 2/3, 1} round to slices {0, 8, 17, 25}.
    let expect: Vec<f64> = [0.0, 8.0 / 25.0, 17.0 / 25.0, 1.0].to_vec();
    assert_eq!(snaps.times, expect);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.toml");
    std::fs::write(
        &path,
        "[scene]\nname = \"vneck\"\n\n[training]\nepcohs = 3\n",
    )
    .unwrap();
    let msg = format!("{:#}", RunConfig::load(&path).unwrap_err());
    assert!(msg.contains("unknown field"), "got {msg}");
    assert!(msg.contains("epcohs"), "got {msg}");
}

#[test]
fn scene_dim_is_opinion_only_and_metrics_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let write_and_load = |body: &str| {
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, body).unwrap();
        RunConfig::load(&path)
    };
    let msg = format!(
        "{:#}",
        write_and_load("[scene]\nname = \"vneck\"\ndim = 3\n").unwrap_err()
    );
    assert!(msg.contains("opinion"), "got {msg}");
    let msg = format!(
        "{:#}",
        write_and_load("[scene]\nname = \"vneck\"\n\n[eval]\nmetrics = [\"w3\"]\n").unwrap_err()
    );
    assert!(msg.contains("unknown metric"), "got {msg}");
    // A valid opinion config parses and builds a 6-dimensional scene.
    let cfg = write_and_load("[scene]\nname = \"opinion\"\ndim = 6\n").unwrap();
    assert_eq!(cfg.build_scene().unwrap().dim(), 6);
}
