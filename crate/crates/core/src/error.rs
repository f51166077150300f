use thiserror::Error;

use crate::linsolve::SolveReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} outside the open interval (0, 1) in {context}")]
    Domain { value: f64, context: &'static str },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("conjugate gradient did not converge ({} iterations, relative residual {:.3e})", .0.iterations, .0.relative_residual)]
    SolverDiverged(SolveReport),

    #[error("evaluation cache does not match the requested density")]
    StaleCache,

    #[error("volume correction root not bracketed in [{lo}, {hi}] (residual at upper end {residual:.3e})")]
    Bracket { lo: f64, hi: f64, residual: f64 },

    #[error("optimality criteria update needs a nonpositive gradient; {count} cells have positive entries (max {max:.3e})")]
    OcInapplicable { count: usize, max: f64 },

    #[error("empty load region: {0}")]
    EmptyLoadRegion(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, actual })
    }
}
