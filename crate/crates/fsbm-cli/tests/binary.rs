//! Smoke tests for the compiled `fsbm` binary itself: flag parsing, exit
//! codes, and error reporting on stderr.

use std::process::Command;

fn fsbm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fsbm"))
}

#[test]
fn help_exits_zero_and_lists_subcommands() {
    let out = fsbm().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["generate-keypoints", "train", "eval", "simulate", "plot"] {
        assert!(text.contains(sub), "--help does not mention {sub}");
    }
}

#[test]
fn train_without_seed_fails_with_guidance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[scene]\nname = \"vneck\"\n").unwrap();
    let out = fsbm().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success(), "train without a seed must fail");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("seed"), "stderr should explain the seed requirement: {stderr}");
}

#[test]
fn missing_config_file_is_reported() {
    let out = fsbm()
        .args(["train", "--config", "/nonexistent/cfg.toml"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("error:"), "got {stderr}");
    assert!(stderr.contains("cfg.toml"), "got {stderr}");
}
