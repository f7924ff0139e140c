use thiserror::Error;

/// Errors raised by the library. Each variant belongs to one of the
/// categories used by the command-line exit codes, see [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix of size {n} is not positive definite even with jitter {max_jitter:e}")]
    NotPositiveDefinite { n: usize, max_jitter: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("built-in mean functions need scalar inputs, got dimension {0}")]
    UnsupportedDimension(usize),

    #[error("mean function `{0}` is not linear in its parameters")]
    NotLinearInParameters(String),

    #[error("invalid covariance parameters for `{kind}` kernel: {reason}")]
    InvalidBeta { kind: &'static str, reason: String },

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),

    #[error("predictive variance {0:e} is negative beyond rounding tolerance")]
    NegativeVariance(f64),

    #[error("mean-parameter information matrix is singular (condition number {condition:e})")]
    SingularM { condition: f64 },

    #[error("the hybrid bound needs a mean function with at least one parameter")]
    ZeroParameterMean,

    #[error("all {starts} optimizer starts failed")]
    AllStartsFailed { starts: usize },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("data gap: no record for {year}-{month:02}")]
    DataGap { year: i32, month: u32 },

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("duplicate record for {year}-{month:02}")]
    DuplicateMonth { year: i32, month: u32 },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification used to map errors onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Numerical,
    Data,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            NotPositiveDefinite { .. }
            | NegativeVariance(_)
            | SingularM { .. }
            | AllStartsFailed { .. } => ErrorCategory::Numerical,
            DataGap { .. }
            | MalformedRow { .. }
            | DuplicateMonth { .. }
            | InvalidData(_)
            | Csv(_) => ErrorCategory::Data,
            DimensionMismatch { .. }
            | UnsupportedDimension(_)
            | NotLinearInParameters(_)
            | InvalidBeta { .. }
            | InvalidHyperparameters(_)
            | ZeroParameterMean
            | ConfigInvalid(_)
            | Io(_)
            | Json(_) => ErrorCategory::Config,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
