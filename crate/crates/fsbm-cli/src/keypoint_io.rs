//! Line-oriented keypoint file format:
//!
//! ```text
//! FSBM-KP v1 N d T
//! t_0 t_1 … t_{T−1}
//! <N blocks of T lines, each with d space-separated floats>
//! ```
//!
//! Floats are written in Rust's shortest round-trip decimal form, so
//! `read(write(ks)) == ks` bitwise.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::{Array1, Array2, Array3};

use fsbm_core::guidance::KeypointSet;

const MAGIC: &str = "FSBM-KP";
const VERSION: &str = "v1";

pub fn format_keypoints(ks: &KeypointSet) -> String {
    let (n, t_count, d) = ks.trajectories().dim();
    let mut out = String::new();
    writeln!(out, "{MAGIC} {VERSION} {n} {d} {t_count}").unwrap();
    let grid: Vec<String> = ks.time_grid().iter().map(|v| v.to_string()).collect();
    writeln!(out, "{}", grid.join(" ")).unwrap();
    for i in 0..n {
        for k in 0..t_count {
            let row: Vec<String> =
                (0..d).map(|j| ks.trajectories()[(i, k, j)].to_string()).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
    }
    out
}

pub fn write_keypoints(ks: &KeypointSet, path: &Path) -> Result<()> {
    std::fs::write(path, format_keypoints(ks))
        .with_context(|| format!("writing keypoint file {}", path.display()))
}

pub fn parse_keypoints(text: &str) -> Result<KeypointSet> {
    let mut lines = text.lines();
    let header = lines.next().context("keypoint file is empty")?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != MAGIC || fields[1] != VERSION {
        bail!("bad keypoint header '{header}' (expected '{MAGIC} {VERSION} N d T')");
    }
    let n: usize = fields[2].parse().context("keypoint count N")?;
    let d: usize = fields[3].parse().context("keypoint dimension d")?;
    let t_count: usize = fields[4].parse().context("keypoint grid size T")?;
    if n == 0 || d == 0 || t_count < 2 {
        bail!("keypoint header needs N >= 1, d >= 1, T >= 2; got N={n} d={d} T={t_count}");
    }

    let grid_line = lines.next().context("missing time-grid line")?;
    let grid = parse_floats(grid_line, t_count, "time grid")?;

    let mut trajectories = Array3::zeros((n, t_count, d));
    for i in 0..n {
        for k in 0..t_count {
            let line = lines
                .next()
                .with_context(|| format!("missing trajectory line for keypoint {i}, grid point {k}"))?;
            let row = parse_floats(line, d, "trajectory row")?;
            for j in 0..d {
                trajectories[(i, k, j)] = row[j];
            }
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        bail!("trailing content after the last trajectory row");
    }

    let source = Array2::from_shape_fn((n, d), |(i, j)| trajectories[(i, 0, j)]);
    let target = Array2::from_shape_fn((n, d), |(i, j)| trajectories[(i, t_count - 1, j)]);
    Ok(KeypointSet::new(
        source,
        target,
        trajectories,
        Array1::from_vec(grid),
    )?)
}

pub fn read_keypoints(path: &Path) -> Result<KeypointSet> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading keypoint file {}", path.display()))?;
    parse_keypoints(&text).with_context(|| format!("parsing keypoint file {}", path.display()))
}

fn parse_floats(line: &str, expect: usize, what: &str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .with_context(|| format!("bad float '{tok}' in {what}"))
        })
        .collect::<Result<_>>()?;
    if vals.len() != expect {
        bail!("{what} has {} values, expected {expect}", vals.len());
    }
    Ok(vals)
}
