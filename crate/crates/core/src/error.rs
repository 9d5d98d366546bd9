use thiserror::Error;

/// Errors produced anywhere in the testing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular normal equations: rank {rank} of {dim}")]
    Singular { rank: usize, dim: usize },

    #[error("solver did not converge after {iterations} iterations (sse {sse:.6e})")]
    NoConvergence { iterations: usize, sse: f64 },

    #[error("non-positive variance {value:.3e} at observation {index}")]
    NonPositiveVariance { index: usize, value: f64 },

    #[error("degenerate weight function: rho_hat = {0:.3e}")]
    DegenerateWeight(f64),

    #[error("{0}")]
    Unsupported(String),

    #[error("bootstrap replicate {replicate} failed twice: {reason}")]
    Bootstrap { replicate: usize, reason: String },

    #[error("csv: {0}")]
    Csv(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
