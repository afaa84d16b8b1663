use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by estimation, sampling, and IO routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix not positive definite (smallest eigenvalue estimate {min_eigen:.3e})")]
    Singular { min_eigen: f64 },

    #[error("no events with positive weight")]
    NoEvents,

    #[error("Newton did not converge in {iterations} iterations (max |score| = {score_norm:.3e})")]
    NotConverged { iterations: usize, score_norm: f64 },

    #[error("operation requires a converged fit")]
    UnconvergedFit,

    #[error(
        "calibration failed after {iterations} Newton steps \
         (worst constraint residual {worst_residual:.3e}, max weight {max_weight:.3e})"
    )]
    CalibrationFailure {
        iterations: usize,
        worst_residual: f64,
        max_weight: f64,
    },

    #[error("auxiliary matrix rank deficient on the validated subset (column {column})")]
    RankDeficient { column: usize },

    #[error("truth columns requested for subject {subject} outside the validation sample")]
    NotValidated { subject: usize },

    #[error("validation sample has {observed} subjects, at least {required} required")]
    ValidationTooSmall { observed: usize, required: usize },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }
}
