//! Deterministic random-stream derivation.
//!
//! Every parallel work item (a coupling pair, an epoch, an evaluation pass)
//! derives its own ChaCha stream from the master seed and a structured stream
//! id. Results are then independent of thread scheduling: a rayon map over
//! pairs collects in index order and each pair consumed only its own stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Functional domains that consume randomness. Each gets a disjoint block of
/// stream ids so that, e.g., evaluation draws never perturb training draws.
#[derive(Debug, Clone, Copy)]
pub enum Domain {
    Coupling = 1,
    Spline = 2,
    Regression = 3,
    Eval = 4,
    Keypoints = 5,
    Init = 6,
    Scene = 7,
}

/// A ChaCha8 generator on stream `(domain, a, b)` of the master `seed`.
///
/// `a` is typically an epoch index and `b` a per-item index; both must stay
/// below 2^24 which is far beyond any desk-scale run.
pub fn substream(seed: u64, domain: Domain, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 48) | (a << 24) | b);
    rng
}
