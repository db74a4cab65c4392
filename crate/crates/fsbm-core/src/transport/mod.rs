//! Entropic optimal transport, exact W2, and distribution metrics.
//!
//! The static problem solved here is
//!
//! ```text
//! min_π ⟨C, π⟩ + ε · KL(π | μ ⊗ ν)
//! ```
//!
//! over couplings π of the (uniform) marginals μ, ν, with C the pairwise
//! squared Euclidean cost. [`sinkhorn_plan`] solves it in the log domain with
//! ε-scaling; [`exact_w2`] solves the ε → 0 limit exactly via a
//! Jonker–Volgenant-style assignment; [`knn_kl`] estimates KL divergences
//! between sample sets with a k-nearest-neighbor estimator.

mod assignment;
mod kl;
mod pairs;
mod sinkhorn;

pub use assignment::{exact_w2, solve_assignment, W2_SUBSAMPLE_CAP};
pub use kl::knn_kl;
pub use pairs::sample_pairs_from_plan;
pub use sinkhorn::{
    primal_objective, sinkhorn_fixed_eps, sinkhorn_plan, CostMatrix, TransportPlan,
};
