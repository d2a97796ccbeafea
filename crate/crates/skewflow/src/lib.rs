//! skewflow: a numerical laboratory for scalar nonautonomous ODEs
//!
//!     x' = a(ω·t)·x + b(ω·t) + g(ω·t, x)
//!
//! driven by minimal rotations on the d-torus. The library builds the
//! coefficients (including the pathological bump-series class whose primitive
//! is bounded on a full-measure set but unbounded along one excluded orbit),
//! computes the global attractor's covers by pullback, classifies the
//! dynamical regime through the Sacker-Sell spectrum, and measures Li-Yorke /
//! Auslander-Yorke chaos diagnostics.
//!
//! Everything is deterministic: randomness flows from explicit seeds, and the
//! parallel code paths (feature `parallel`, on by default) produce bit-stable
//! results identical to the sequential fallback.

pub mod attractor;
pub mod base_flow;
pub mod chaos;
pub mod coefficients;
mod error;
pub mod exec;
pub mod integrator;
pub mod model;
pub mod spectrum;

pub use error::{Error, Result};

/// Crate version, for embedding in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
