use thiserror::Error;

use crate::operator::ClusterState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rate model: {0}")]
    InvalidModel(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("kernel is not mass conserving: |sum_i i*b(i,{j}) - {j}| = {deviation:e} exceeds {tolerance:e}")]
    KernelNotConservative { j: usize, deviation: f64, tolerance: f64 },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("minimum of theta is attained at several indices {indices:?}; dominant eigenpair is not simple")]
    Multiplicity { indices: Vec<usize> },

    #[error("eigenvector recursion overflowed at index {index} (|value| = {value:e})")]
    EigenOverflow { index: usize, value: f64 },

    #[error("dense computation refused: N = {n} exceeds the limit of {limit}")]
    DenseLimit { n: usize, limit: usize },

    #[error("invalid integrator configuration: {0}")]
    Config(String),

    #[error("integration failed at t = {t}: step size {dt:e} fell below dt_min without passing the error test")]
    IntegrationFailure {
        t: f64,
        dt: f64,
        last_good: Box<ClusterState>,
    },
}
