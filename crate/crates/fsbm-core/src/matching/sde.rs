//! Euler–Maruyama integration of the learned SDE, with per-step drift
//! clamping and divergence detection.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::driftnet::DriftNetwork;
use crate::error::{Error, Result};
use crate::matching::Direction;
use crate::scenes::Scene;

/// Per-row drift magnitude cap: early-training nets can emit huge drifts
/// and a single uncapped step would fling particles out of the domain.
pub const DRIFT_CLAMP: f64 = 1e3;
/// Any coordinate beyond this magnitude counts as a diverged particle.
pub const DIVERGENCE_RADIUS: f64 = 1e6;

/// Integrates `dX = drift(X, τ)·dτ + sigma·dW` over `steps` uniform steps on
/// τ ∈ [0, 1], returning the full trajectory tensor (steps+1) × n × d with
/// slice k holding the states at τ = k/steps.
///
/// Drift rows are clamped to ‖u‖ ≤ [`DRIFT_CLAMP`]; non-finite or runaway
/// states abort with a diagnostic.
pub fn euler_maruyama_with<R, F>(
    mut drift: F,
    x0: ArrayView2<'_, f64>,
    sigma: f64,
    steps: usize,
    rng: &mut R,
) -> Result<Array3<f64>>
where
    R: Rng + ?Sized,
    F: FnMut(&Array2<f64>, f64) -> Result<Array2<f64>>,
{
    if steps == 0 {
        return Err(Error::Domain("SDE integration needs >= 1 step".into()));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Domain(format!("diffusion must be >= 0, got {sigma}")));
    }
    let (n, d) = x0.dim();
    if n == 0 || d == 0 {
        return Err(Error::Shape("SDE integration needs a non-empty batch".into()));
    }
    let dt = 1.0 / steps as f64;
    let noise_scale = sigma * dt.sqrt();
    let mut traj = Array3::zeros((steps + 1, n, d));
    traj.index_axis_mut(Axis(0), 0).assign(&x0);
    let mut x = x0.to_owned();
    for k in 0..steps {
        let t = k as f64 * dt;
        let mut u = drift(&x, t)?;
        if u.dim() != (n, d) {
            return Err(Error::Shape(format!(
                "drift returned shape {:?}, expected ({n}, {d})",
                u.dim()
            )));
        }
        clamp_rows(&mut u);
        for i in 0..n {
            for j in 0..d {
                let noise: f64 = rng.sample(StandardNormal);
                x[(i, j)] += dt * u[(i, j)] + noise_scale * noise;
            }
        }
        if let Some((i, j, v)) = first_divergence(&x) {
            return Err(Error::Abort(format!(
                "particle {i} diverged at integration step {} (clock {:.3}): coordinate {j} = {v:e}",
                k + 1,
                t + dt
            )));
        }
        traj.index_axis_mut(Axis(0), k + 1).assign(&x);
    }
    Ok(traj)
}

fn clamp_rows(u: &mut Array2<f64>) {
    for mut row in u.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > DRIFT_CLAMP {
            row *= DRIFT_CLAMP / norm;
        }
    }
}

fn first_divergence(x: &Array2<f64>) -> Option<(usize, usize, f64)> {
    for ((i, j), &v) in x.indexed_iter() {
        if !v.is_finite() || v.abs() > DIVERGENCE_RADIUS {
            return Some((i, j, v));
        }
    }
    None
}

/// Integrates the learned drift field alone and returns the trajectory in
/// physical time order: slice k always holds the states at t = k/steps.
///
/// Forward runs start from `x_init` at t=0. Backward runs start from
/// `x_init` at t=1 and integrate the net in its own reversed clock s = 1−t;
/// the result is flipped so slice 0 holds the t=0 states it reached.
pub fn euler_maruyama<R: Rng + ?Sized>(
    net: &DriftNetwork,
    x_init: ArrayView2<'_, f64>,
    sigma: f64,
    steps: usize,
    rng: &mut R,
    direction: Direction,
) -> Result<Array3<f64>> {
    let traj = euler_maruyama_with(
        |x, clock| {
            let times = Array1::from_elem(x.nrows(), clock);
            net.forward(x.view(), times.view())
        },
        x_init,
        sigma,
        steps,
        rng,
    )?;
    Ok(match direction {
        Direction::Forward => traj,
        Direction::Backward => reverse_time(traj),
    })
}

fn reverse_time(traj: Array3<f64>) -> Array3<f64> {
    let mut flipped = traj;
    flipped.invert_axis(Axis(0));
    flipped
}

/// Forward simulation of the controlled scene dynamics: the learned drift
/// plus the scene's base drift (the polarizing field for the opinion scene,
/// with one fresh shared information vector ξ per step).
pub fn simulate_forward<R: Rng + ?Sized>(
    net: &DriftNetwork,
    scene: &Scene,
    x0: ArrayView2<'_, f64>,
    steps: usize,
    rng: &mut R,
    xi_rng: &mut R,
) -> Result<Array3<f64>> {
    let d = scene.dim();
    euler_maruyama_with(
        |x, t| {
            let times = Array1::from_elem(x.nrows(), t);
            let mut u = net.forward(x.view(), times.view())?;
            let xi =
                Array1::from_shape_fn(d, |_| xi_rng.sample::<f64, _>(StandardNormal));
            if let Some(base) = scene.base_drift(x.view(), xi.view()) {
                u += &base?;
            }
            Ok(u)
        },
        x0,
        scene.sigma(),
        steps,
        rng,
    )
}

/// Backward simulation from t=1 states using the backward net alone. The
/// returned tensor is in physical time order: slice 0 holds the t=0 states.
pub fn simulate_backward<R: Rng + ?Sized>(
    net: &DriftNetwork,
    scene: &Scene,
    x1: ArrayView2<'_, f64>,
    steps: usize,
    rng: &mut R,
) -> Result<Array3<f64>> {
    euler_maruyama(net, x1, scene.sigma(), steps, rng, Direction::Backward)
}
