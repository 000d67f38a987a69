//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("inner solver did not converge after {iterations} iterations (gradient norm {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("run aborted at step {step}: {reason}")]
    Aborted { step: u64, reason: String },

    #[error("run cancelled at step {0}")]
    Cancelled(u64),

    #[error("memory budget exceeded: {0}")]
    MemoryBudget(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("dimension too large for brute force: {0}")]
    DimensionTooLarge(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
