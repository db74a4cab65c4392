//! Feedback Schrödinger bridge matching (FSBM).
//!
//! Semi-supervised distribution transport: a small set of pre-aligned keypoint
//! pairs (with trajectories connecting them) guides bridge matching for the
//! rest of the population. The crate is organized bottom-up:
//!
//! - [`transport`] — entropic optimal transport (log-domain Sinkhorn with
//!   ε-scaling), exact W2 via assignment, plan sampling, k-NN KL estimation.
//! - [`guidance`] — keypoint sets and the quadratic L1-discrepancy guidance
//!   function G, its a.e. gradient/Laplacian, and the clipped-ratio coefficient
//!   with the associated Hamiltonian.
//! - [`paths`] — Gaussian conditional paths N(I_t, σ_t²I) with spline-
//!   parameterized mean and variance, the conditional drift, and the
//!   simulation-free path optimizer.
//! - [`driftnet`] — a from-scratch residual MLP drift field with hand-written
//!   reverse-mode gradients, AdamW, and a binary checkpoint format.
//! - [`scenes`] — crowd-navigation benchmarks (S-tunnel, V-neck), the opinion
//!   depolarization scene, obstacle costs, and keypoint generation.
//! - [`matching`] — the forward–backward training driver: couplings, epoch
//!   alternation, Euler–Maruyama simulation, metric logging, persistence.
//!
//! All randomness flows through explicitly seeded ChaCha streams (see
//! [`rng::substream`]); identical configuration + seed reproduces results
//! bitwise, including across the rayon-parallel sections.

pub mod driftnet;
pub mod error;
pub mod guidance;
pub mod matching;
pub mod paths;
pub mod scenes;
pub mod rng;
pub mod transport;

pub use error::{Error, Result};
