//! Correlated two-fragment wavepackets from a decaying source.
//!
//! Natural units throughout: ħ = 1, so h = 2π.

pub mod correlation_stats;
pub mod error;
pub mod model;
pub mod pair_amplitude;
pub mod quadrature;
pub mod rng;
pub mod single_particle;
pub mod stationary_phase;

pub use error::{Error, Result};
