//! Command-line front end for keypoint-guided bridge matching: keypoint
//! generation, training, evaluation, reference simulation, and plotting.
//! The binary in `main.rs` is a thin flag-parsing shim over [`commands`].

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod keypoint_io;
