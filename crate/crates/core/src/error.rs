use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("Picard iteration did not converge after {iters} outer steps (last update {last_update:e})")]
    NotConverged {
        iters: usize,
        last_update: f64,
        energy_history: Vec<f64>,
    },

    #[error("conjugate gradient stalled after {iters} iterations (relative residual {residual:e})")]
    LinearSolve { iters: usize, residual: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
