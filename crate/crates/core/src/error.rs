use thiserror::Error;

/// Errors raised by the solver and its building blocks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("rank-deficient noise-free observation (row {row}): {context}")]
    RankDeficient { context: String, row: usize },

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("linearization failed at t = {t}: {reason}")]
    LinearizationFailure { t: f64, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time {t} outside of the domain [{t0}, {tmax}]")]
    OutOfDomain { t: f64, t0: f64, tmax: f64 },

    #[error("unknown problem '{name}'; available: {}", available.join(", "))]
    UnknownProblem {
        name: String,
        available: Vec<String>,
    },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}
