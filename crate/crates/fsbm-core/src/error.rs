//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the transport, path, network, and training layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Array dimensions do not line up (row counts, point dimensions, …).
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A value is outside its mathematical domain (NaN cost, t ∉ [0,1], …).
    #[error("domain error: {0}")]
    Domain(String),
    /// Underlying filesystem failure while persisting or loading artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    /// A checkpoint file is malformed or inconsistent with the caller.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    /// Training aborted (diverged particles, diverged spline optimization, …).
    #[error("aborted: {0}")]
    Abort(String),
}

pub type Result<T> = std::result::Result<T, Error>;
