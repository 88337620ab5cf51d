use thiserror::Error;

/// Errors raised by the recovery toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Geometry does not line up with the fine grid (patch or subsample boundaries off grid lines).
    #[error("alignment error: {0}")]
    Alignment(String),

    /// A parameter lies outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative method stopped before reaching its tolerance.
    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e}, tolerance {tolerance:.1e})")]
    Solver {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    /// A matrix expected to be symmetric positive definite failed to factor.
    #[error("matrix is not positive definite: {0}")]
    Indefinite(String),

    /// Sizes of two objects do not agree.
    #[error("dimension mismatch: {0}")]
    Mismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
