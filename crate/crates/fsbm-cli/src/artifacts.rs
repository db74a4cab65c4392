//! Trajectory artifacts: snapshot extraction, CSV dump/parse, and static
//! SVG scatter rendering with obstacle overlays. The emitters are pure
//! functions of the snapshot data, so a CSV re-render reproduces the
//! original SVG byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::{Array2, ArrayView3, Axis};

use fsbm_core::scenes::Obstacle;

/// Canonical snapshot fractions of the horizon.
pub const SNAPSHOT_FRACTIONS: [f64; 4] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];

/// Particle positions at a handful of times; `points[k]` is n × d at
/// `times[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub times: Vec<f64>,
    pub points: Vec<Array2<f64>>,
}

impl SnapshotSet {
    /// Extracts the canonical snapshots from a trajectory tensor
    /// ((steps+1) × n × d, slice k at t = k/steps), using the nearest grid
    /// slice to each fraction and recording the exact slice time.
    pub fn from_trajectory(traj: ArrayView3<'_, f64>) -> Self {
        let steps = traj.dim().0 - 1;
        let mut times = Vec::new();
        let mut points = Vec::new();
        for frac in SNAPSHOT_FRACTIONS {
            let k = (frac * steps as f64).round() as usize;
            times.push(k as f64 / steps as f64);
            points.push(traj.index_axis(Axis(0), k).to_owned());
        }
        Self { times, points }
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.ncols())
    }

    pub fn n_particles(&self) -> usize {
        self.points.first().map_or(0, |p| p.nrows())
    }
}

/// CSV with columns `t,particle_id,x_0..x_{d-1}`, one row per
/// (snapshot, particle). Floats use the shortest round-trip form.
pub fn format_trajectory_csv(snapshots: &SnapshotSet) -> String {
    let d = snapshots.dim();
    let mut out = String::new();
    out.push_str("t,particle_id");
    for j in 0..d {
        write!(out, ",x_{j}").unwrap();
    }
    out.push('\n');
    for (t, pts) in snapshots.times.iter().zip(&snapshots.points) {
        for (pid, row) in pts.rows().into_iter().enumerate() {
            write!(out, "{t},{pid}").unwrap();
            for v in row.iter() {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_trajectory_csv(snapshots: &SnapshotSet, path: &Path) -> Result<()> {
    std::fs::write(path, format_trajectory_csv(snapshots))
        .with_context(|| format!("writing trajectory CSV {}", path.display()))
}

pub fn parse_trajectory_csv(text: &str) -> Result<SnapshotSet> {
    let mut lines = text.lines();
    let header = lines.next().context("trajectory CSV is empty")?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "t" || cols[1] != "particle_id" {
        bail!("bad trajectory CSV header '{header}' (expected t,particle_id,x_0,…)");
    }
    let d = cols.len() - 2;
    let mut times: Vec<f64> = Vec::new();
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            bail!("row {} has {} fields, expected {}", lineno + 2, fields.len(), cols.len());
        }
        let t: f64 = fields[0].parse().with_context(|| format!("bad t in row {}", lineno + 2))?;
        if times.last() != Some(&t) {
            times.push(t);
            groups.push(Vec::new());
        }
        let group = groups.last_mut().unwrap();
        for tok in &fields[2..] {
            group.push(
                tok.parse::<f64>()
                    .with_context(|| format!("bad coordinate in row {}", lineno + 2))?,
            );
        }
    }
    if times.is_empty() {
        bail!("trajectory CSV has no data rows");
    }
    let mut points = Vec::with_capacity(groups.len());
    for group in groups {
        let n = group.len() / d;
        points.push(
            Array2::from_shape_vec((n, d), group).context("ragged trajectory CSV group")?,
        );
    }
    Ok(SnapshotSet { times, points })
}

pub fn read_trajectory_csv(path: &Path) -> Result<SnapshotSet> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading trajectory CSV {}", path.display()))?;
    parse_trajectory_csv(&text)
        .with_context(|| format!("parsing trajectory CSV {}", path.display()))
}

const PANEL: f64 = 260.0;
const MARGIN: f64 = 14.0;

/// One scatter panel per snapshot (first two coordinates), obstacles drawn
/// behind the particles, all panels sharing one symmetric world box.
pub fn render_svg(snapshots: &SnapshotSet, obstacles: &[Obstacle]) -> String {
    let half = world_half_extent(snapshots, obstacles);
    let n_panels = snapshots.times.len();
    let width = n_panels as f64 * (PANEL + MARGIN) + MARGIN;
    let height = PANEL + 2.0 * MARGIN + 18.0;
    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\">"
    )
    .unwrap();
    writeln!(svg, "<rect width=\"{width:.0}\" height=\"{height:.0}\" fill=\"white\"/>").unwrap();
    for (idx, (t, pts)) in snapshots.times.iter().zip(&snapshots.points).enumerate() {
        let ox = MARGIN + idx as f64 * (PANEL + MARGIN);
        let oy = MARGIN;
        let to_px = |x: f64, y: f64| -> (f64, f64) {
            (
                ox + (x + half) / (2.0 * half) * PANEL,
                oy + PANEL - (y + half) / (2.0 * half) * PANEL,
            )
        };
        writeln!(
            svg,
            "<clipPath id=\"panel{idx}\"><rect x=\"{ox:.1}\" y=\"{oy:.1}\" \
             width=\"{PANEL:.0}\" height=\"{PANEL:.0}\"/></clipPath>"
        )
        .unwrap();
        writeln!(svg, "<g clip-path=\"url(#panel{idx})\">").unwrap();
        writeln!(
            svg,
            "<rect x=\"{ox:.1}\" y=\"{oy:.1}\" width=\"{PANEL:.0}\" height=\"{PANEL:.0}\" \
             fill=\"#fafafa\"/>"
        )
        .unwrap();
        for obstacle in obstacles {
            svg.push_str(&obstacle_shapes(obstacle, half, &to_px));
        }
        for row in pts.rows() {
            let (x, y) = (row[0], *row.get(1).unwrap_or(&0.0));
            let (cx, cy) = to_px(x, y);
            writeln!(
                svg,
                "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"1.8\" fill=\"#3a6ea5\" \
                 fill-opacity=\"0.55\"/>"
            )
            .unwrap();
        }
        writeln!(svg, "</g>").unwrap();
        writeln!(
            svg,
            "<rect x=\"{ox:.1}\" y=\"{oy:.1}\" width=\"{PANEL:.0}\" height=\"{PANEL:.0}\" \
             fill=\"none\" stroke=\"#555\" stroke-width=\"1\"/>"
        )
        .unwrap();
        writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"middle\">t = {t}</text>",
            ox + PANEL / 2.0,
            oy + PANEL + 14.0
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_svg(snapshots: &SnapshotSet, obstacles: &[Obstacle], path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(snapshots, obstacles))
        .with_context(|| format!("writing SVG {}", path.display()))
}

/// Symmetric half-width of the world box: covers every snapshot point and
/// every bounded obstacle with 5% headroom.
fn world_half_extent(snapshots: &SnapshotSet, obstacles: &[Obstacle]) -> f64 {
    let mut half: f64 = 1.0;
    for pts in &snapshots.points {
        for row in pts.rows() {
            half = half.max(row[0].abs());
            if let Some(y) = row.get(1) {
                half = half.max(y.abs());
            }
        }
    }
    for obstacle in obstacles {
        if let Obstacle::Slab { xmin, xmax, ymin, ymax } = obstacle {
            for v in [xmin, xmax, ymin, ymax] {
                half = half.max(v.abs());
            }
        }
    }
    half * 1.05
}

fn obstacle_shapes(
    obstacle: &Obstacle,
    half: f64,
    to_px: &impl Fn(f64, f64) -> (f64, f64),
) -> String {
    const STYLE: &str = "fill=\"#c46a6a\" fill-opacity=\"0.45\"";
    match *obstacle {
        Obstacle::Slab { xmin, xmax, ymin, ymax } => {
            let (x0, y0) = to_px(xmin, ymax);
            let (x1, y1) = to_px(xmax, ymin);
            format!(
                "<rect x=\"{x0:.2}\" y=\"{y0:.2}\" width=\"{:.2}\" height=\"{:.2}\" {STYLE}/>\n",
                x1 - x0,
                y1 - y0
            )
        }
        Obstacle::WedgePair { offset, slope } => {
            let mut shapes = String::new();
            for sign in [1.0f64, -1.0] {
                // Wedge sign·y ≥ offset + slope·|x|, clipped to the world box.
                let edge = offset + slope * half;
                let far = sign * (edge + 2.0 * half);
                let corners = [
                    (-half, sign * edge),
                    (0.0, sign * offset),
                    (half, sign * edge),
                    (half, far),
                    (-half, far),
                ];
                let path: Vec<String> = corners
                    .iter()
                    .map(|&(x, y)| {
                        let (px, py) = to_px(x, y);
                        format!("{px:.2},{py:.2}")
                    })
                    .collect();
                writeln!(shapes, "<polygon points=\"{}\" {STYLE}/>", path.join(" ")).unwrap();
            }
            shapes
        }
    }
}
