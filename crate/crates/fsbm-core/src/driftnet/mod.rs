//! Learnable drift field: residual MLP with sinusoidal time embedding,
//! hand-written reverse-mode gradients, AdamW, and binary checkpoints.

mod adamw;
mod checkpoint;
mod network;

pub use adamw::{AdamW, AdamWConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use network::{time_embed, BlockParams, DriftNetwork, LinearParams, NetParams};
