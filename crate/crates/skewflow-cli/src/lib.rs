//! Experiment driver around the skewflow library: TOML-configured tasks
//! with deterministic, digest-manifested artifact directories.
//!
//! The binary is a thin argument parser over [`runner::run`]; tests and
//! downstream tooling can call the same entry points in-process.

pub mod config;
pub mod presets;
pub mod runner;
