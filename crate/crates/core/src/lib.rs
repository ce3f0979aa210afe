//! Numerical tools for stealthy and generalized stealthy hyperuniform processes:
//! lattice spectra, Gaussian fields with spectral gaps, stealthy point
//! configurations, linear statistics and rigidity (reconstruction) experiments.

pub mod error;
pub mod gaussian;
pub mod lattice;
pub mod lbfgs;
pub mod points;
pub mod quadrature;
pub mod report;
pub mod rigidity;
pub mod testfn;
mod rng;
pub mod stats;
pub mod structure;

pub use error::{Error, Result};
pub use rng::stream_rng;
