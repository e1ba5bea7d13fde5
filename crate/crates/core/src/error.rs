use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Library-wide error type. Variants that originate from a particular input
/// row or subject carry the index so callers can point at the offending line.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data (CSV rows, covariate schedules).
    #[error("row {row}: {message}")]
    Data { row: usize, message: String },

    /// Invalid configuration or arguments (bin counts, solver settings, ...).
    #[error("{0}")]
    Config(String),

    /// A likelihood term that must be strictly positive was not; the
    /// log-likelihood is undefined at the requested parameter point.
    #[error("subject {subject}: {term} likelihood term is non-positive at this parameter point")]
    Domain { subject: usize, term: &'static str },

    /// A point violated the linear constraints where strict feasibility was required.
    #[error("infeasible point: {0}")]
    Infeasible(String),

    /// The interior-point iteration stopped without meeting its tolerances.
    #[error("solver did not converge: {reason} (iteration {iterations}, mu {mu:.3e}, dual residual {dual_residual:.3e})")]
    NonConvergence {
        reason: String,
        iterations: usize,
        mu: f64,
        dual_residual: f64,
    },

    /// A linear system stayed singular or indefinite after regularization.
    #[error("singular system: {0}")]
    Singular(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// File-level parsing problems outside of per-row data errors.
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Shorthand used by ingestion code.
    pub fn data(row: usize, message: impl Into<String>) -> Self {
        Error::Data {
            row,
            message: message.into(),
        }
    }
}
