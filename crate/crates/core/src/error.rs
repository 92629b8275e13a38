use thiserror::Error;

/// Errors raised by the poisson-field library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    /// A series hit `max_terms` before meeting its tolerance.
    #[error("series in {op} not converged after {terms} terms (last term {last_term:e})")]
    Truncation {
        op: &'static str,
        terms: usize,
        last_term: f64,
    },

    /// A probability came out inconsistent beyond round-off.
    #[error("numerical inconsistency in {op}: {msg}")]
    Numerical { op: &'static str, msg: String },

    /// Cholesky failed even after the maximum diagonal jitter.
    #[error("matrix of size {size} is not positive definite (jitter up to {max_jitter:e})")]
    NotPositiveDefinite { size: usize, max_jitter: f64 },

    #[error("no location pairs fall within the weight cutoff")]
    NoPairs,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn numerical(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Numerical {
            op,
            msg: msg.into(),
        }
    }

    /// True for failures caused by floating-point limits rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Truncation { .. } | Error::Numerical { .. } | Error::NotPositiveDefinite { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
