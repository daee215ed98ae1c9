//! Mixing-time analysis for single-site dynamics on path colorings.
//!
//! The crate pairs exact computation on small state spaces (rational
//! kernels, spectra, coupling drifts) with seeded simulation for the
//! quantities that only make sense at larger `n`.
//!
//! Vertices are 0-based indices everywhere in the library. Text formats and
//! the command line use 1-based vertex labels.

pub mod coupling_lab;
pub mod domain;
pub mod dynamics;
mod error;
pub mod exact_analysis;
pub mod percolation_lb;
pub mod wilson_method;

pub use error::{Error, Result};

/// Exact rational used for metrics, weights and drifts.
pub type Exact = num_rational::Ratio<i128>;
