//! Spline-parameterized Gaussian conditional paths and their optimization.
//!
//! A conditional path pins both endpoints of a pair and interpolates with a
//! Gaussian law N(I_t, σ_t² I): [`ConditionalPath`] holds the spline knots of
//! I and σ, supplies exact conditional and reverse drifts, and samples X_t.
//! [`optimize_spline`] bends the knots to minimize the expected running cost
//! (kinetic + guidance, optionally + state cost) without simulating an SDE;
//! [`brownian_bridge_path`] is the analytic initialization and the exact
//! optimum when guidance is off.

mod conditional;
mod optimize;
pub mod spline;

pub use conditional::{
    brownian_bridge_path, uniform_knot_times, ConditionalPath, PathSample, MAX_KNOTS,
    SIGMA_FLOOR, TIME_MARGIN,
};
pub use optimize::{
    conditional_objective, optimize_spline, optimize_spline_with_cost, SplineOpts, StateCost,
};
