//! Discrete decay-fragmentation model: rate families, truncated generator,
//! stiff time integration, dominant spectral data and scenario runner.

pub mod cli;
pub mod error;
pub mod format;
pub mod integrator;
pub mod observables;
pub mod operator;
pub mod rates;
pub mod spectral;

pub use error::{Error, Result};
