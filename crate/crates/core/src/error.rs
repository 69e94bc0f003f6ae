use thiserror::Error;

/// Errors raised by the solvers, operators and frame I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("stacked system of size {size} exceeds the dense cap of {cap}")]
    CapExceeded { size: usize, cap: usize },

    #[error("non-positive curvature {0:e} along the descent direction")]
    NonPositiveCurvature(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("denoiser failed: {0}")]
    Denoiser(String),

    #[error("malformed PGM: {0}")]
    Pgm(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
