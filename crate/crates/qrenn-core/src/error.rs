//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("matrix is not Hermitian: max |A - A^dag| = {deviation:.3e} exceeds {tolerance:.3e}")]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("matrix is not unitary: max |U^dag U - I| = {deviation:.3e} exceeds {tolerance:.3e}")]
    NotUnitary { deviation: f64, tolerance: f64 },

    #[error("eigendecomposition did not converge")]
    EighFailed,

    #[error("Lie closure exceeded max dimension {max_dim}")]
    LieClosureOverflow { max_dim: usize },

    #[error("operators do not commute: relative commutator norm {norm:.3e}")]
    NonCommuting { norm: f64 },

    #[error("joint eigenspace validation failed: {0}")]
    JointEigenspaceValidation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("training diverged: {0}")]
    NonFiniteLoss(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
