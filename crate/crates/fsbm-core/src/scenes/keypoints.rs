//! Keypoint-set synthesis: entropic pairing of fresh source/target draws,
//! then per-pair trajectories — obstacle-aware optimized splines for the
//! crowd scenes, straight lines for the opinion scene.

use ndarray::{Array1, Array2, Array3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::guidance::KeypointSet;
use crate::paths::{optimize_spline_with_cost, SplineOpts};
use crate::rng::{substream, Domain};
use crate::scenes::obstacles::ObstacleMarginCost;
use crate::scenes::{Scene, SceneKind};
use crate::transport::{sample_pairs_from_plan, sinkhorn_plan, CostMatrix};

/// Knobs for [`generate_keypoints`]; `for_scene` picks validated defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointGenOpts {
    /// Entropic regularization of the pairing plan.
    pub epsilon: f64,
    /// Number of dense samples along each trajectory (includes both endpoints).
    pub t_count: usize,
    /// Interior spline knots for trajectory optimization.
    pub k_knots: usize,
    /// Optimizer steps per trajectory.
    pub steps: usize,
    /// Optimizer learning rate.
    pub lr: f64,
    /// Monte Carlo draws per quadrature node for the obstacle penalty.
    pub mc_samples: usize,
    /// Obstacle clearance margin during synthesis (0 = exact penetration
    /// penalty). A positive margin keeps trajectories off corridor walls.
    pub margin: f64,
}

impl KeypointGenOpts {
    pub fn for_scene(scene: &Scene) -> Self {
        match scene.kind() {
            SceneKind::STunnel => KeypointGenOpts {
                epsilon: 0.01,
                t_count: 64,
                k_knots: 12,
                steps: 500,
                lr: 0.1,
                mc_samples: 8,
                margin: 1.0,
            },
            SceneKind::VNeck => KeypointGenOpts {
                epsilon: 0.01,
                t_count: 64,
                k_knots: 8,
                steps: 400,
                lr: 0.1,
                mc_samples: 8,
                margin: 0.0,
            },
            SceneKind::Opinion => KeypointGenOpts {
                epsilon: 0.01,
                t_count: 64,
                k_knots: 0,
                steps: 0,
                lr: 0.1,
                mc_samples: 1,
                margin: 0.0,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Domain(format!(
                "pairing epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.t_count < 2 {
            return Err(Error::Domain(format!(
                "trajectory sampling needs >= 2 points, got {}",
                self.t_count
            )));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::Domain(format!("margin must be >= 0, got {}", self.margin)));
        }
        Ok(())
    }
}

/// Draws `n_kp` source and target samples, pairs them through an entropic
/// plan, and synthesizes one trajectory per sampled pair.
///
/// Crowd scenes thread trajectories around the obstacles by optimizing the
/// conditional-path objective plus a clearance penalty (the S-tunnel also
/// seeds the optimizer with corridor waypoints); the opinion scene uses
/// straight lines. All randomness derives from `seed` via fixed substreams,
/// so results are reproducible regardless of thread count.
pub fn generate_keypoints(
    scene: &Scene,
    n_kp: usize,
    opts: &KeypointGenOpts,
    seed: u64,
) -> Result<KeypointSet> {
    opts.validate()?;
    if n_kp == 0 {
        return Err(Error::Domain("keypoint count must be >= 1".into()));
    }
    let d = scene.dim();

    let sources = scene.sample_source(n_kp, &mut substream(seed, Domain::Keypoints, 0, 0));
    let targets = scene.sample_target(n_kp, &mut substream(seed, Domain::Keypoints, 1, 0));

    let cost = CostMatrix::squared_euclidean(sources.view(), targets.view())?;
    let plan = sinkhorn_plan(&cost, opts.epsilon, 20_000, 1e-9)?;
    let pairs = sample_pairs_from_plan(
        plan.plan.view(),
        n_kp,
        &mut substream(seed, Domain::Keypoints, 2, 0),
    )?;

    let mut src = Array2::zeros((n_kp, d));
    let mut tgt = Array2::zeros((n_kp, d));
    for (row, &(i, j)) in pairs.iter().enumerate() {
        src.row_mut(row).assign(&sources.row(i));
        tgt.row_mut(row).assign(&targets.row(j));
    }

    if scene.kind() == SceneKind::Opinion {
        return KeypointSet::linear(src, tgt, opts.t_count);
    }

    let spline_opts = SplineOpts {
        k_knots: opts.k_knots,
        steps: opts.steps,
        lr: opts.lr,
        mc_samples: opts.mc_samples,
        nu: scene.sigma(),
        sigma: scene.sigma(),
        ..SplineOpts::default()
    };
    let state_cost = ObstacleMarginCost::new(scene.obstacles().to_vec(), opts.margin);
    let knot_times = crate::paths::uniform_knot_times(opts.k_knots);
    let grid = Array1::from_shape_fn(opts.t_count, |i| i as f64 / (opts.t_count - 1) as f64);

    let rows: Vec<Array2<f64>> = (0..n_kp)
        .into_par_iter()
        .map(|row| -> Result<Array2<f64>> {
            let x0 = src.row(row);
            let x1 = tgt.row(row);
            let init = match scene.kind() {
                SceneKind::STunnel => {
                    let mut points = vec![x0.to_owned()];
                    for w in crate::scenes::STUNNEL_WAYPOINTS {
                        points.push(ndarray::arr1(&w));
                    }
                    points.push(x1.to_owned());
                    Some(polyline_at(&points, &knot_times))
                }
                _ => None,
            };
            let mut rng = substream(seed, Domain::Keypoints, 3, row as u64);
            let path = optimize_spline_with_cost(
                x0,
                x1,
                None,
                Some(&state_cost),
                init.as_ref().map(|m| m.view()),
                &spline_opts,
                &mut rng,
            )?;
            let mut traj = Array2::zeros((opts.t_count, d));
            for (ti, &t) in grid.iter().enumerate() {
                let (mean, _, _, _) = path.spline_eval(t)?;
                traj.row_mut(ti).assign(&mean);
            }
            Ok(traj)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut trajectories = Array3::zeros((n_kp, opts.t_count, d));
    for (row, traj) in rows.into_iter().enumerate() {
        trajectories
            .index_axis_mut(ndarray::Axis(0), row)
            .assign(&traj);
    }
    KeypointSet::new(src, tgt, trajectories, grid)
}

/// Arc-length parameterized evaluation of a polyline at the given fractions
/// of total length (the spline-knot initialization for corridor threading).
fn polyline_at(points: &[Array1<f64>], fractions: &Array1<f64>) -> Array2<f64> {
    let d = points[0].len();
    let nseg = points.len() - 1;
    let mut cum = vec![0.0; points.len()];
    for s in 0..nseg {
        let len = (&points[s + 1] - &points[s]).mapv(|v| v * v).sum().sqrt();
        cum[s + 1] = cum[s] + len;
    }
    let total = cum[nseg];
    let mut out = Array2::zeros((fractions.len(), d));
    for (i, &f) in fractions.iter().enumerate() {
        let s_target = f * total;
        let j = cum.partition_point(|&c| c <= s_target).clamp(1, nseg) - 1;
        let seg_len = (cum[j + 1] - cum[j]).max(1e-12);
        let r = (s_target - cum[j]) / seg_len;
        let p = &points[j] + &(r * (&points[j + 1] - &points[j]));
        out.row_mut(i).assign(&p);
    }
    out
}
