//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, numerics, and the sampler.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation
    /// (non-positive shape parameter, negative count, bad median, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical routine failed to converge or produced a non-finite value.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Input data violates a structural invariant (counts vs. records,
    /// unknown slope-unit ids, inconsistent tables).
    #[error("invalid data: {0}")]
    Data(String),

    /// A run configuration is internally inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
