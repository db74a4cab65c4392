//! Alternating bridge matching.
//!
//! Training alternates two drift networks: each epoch draws an endpoint
//! coupling by redrawing one side's marginal from its true sampler and
//! simulating that side's network across, bends a guided conditional path
//! through every pair, and regresses the opposite network onto the paths'
//! conditional drifts. Because the regression residual ‖a − g∇G − u*‖²
//! against the guided drift equals the plain drift MSE after the
//! reparameterization u = a − g∇G, fitting the conditional drift directly
//! optimizes the same objective.
//!
//! [`euler_maruyama`] integrates the learned SDE, [`sample_coupling`] draws
//! couplings, [`train_epoch`] runs one alternation, and [`run_fsbm`] runs a
//! whole persisted training loop.

mod sde;
mod trainer;

use ndarray::Array2;

pub use sde::{
    euler_maruyama, euler_maruyama_with, simulate_backward, simulate_forward, DIVERGENCE_RADIUS,
    DRIFT_CLAMP,
};
pub use trainer::{
    evaluate_forward, run_fsbm, sample_coupling, train_epoch, EpochMetrics, EvalReport,
    MatchConfig, TrainState,
};

/// Which side of the transport a network models: forward nets drive mass
/// from t=0 to t=1 on the clock t, backward nets drive it from t=1 to t=0
/// on the reversed clock s = 1−t.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

/// How an endpoint coupling was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingSource {
    /// Both sides drawn independently from the true samplers (epoch 0).
    Independent,
    /// x0 drawn from the source sampler, x1 simulated by the forward net.
    ForwardSimulated,
    /// x1 drawn from the target sampler, x0 simulated by the backward net.
    BackwardSimulated,
}

/// Paired endpoints (row i of `x0` couples with row i of `x1`).
#[derive(Debug, Clone)]
pub struct Coupling {
    pub x0: Array2<f64>,
    pub x1: Array2<f64>,
    pub source: CouplingSource,
}
