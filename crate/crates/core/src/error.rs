use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("fixed-point solver did not converge after {iterations} iterations (best residual {residual:e})")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("problem too large for exhaustive search: {0}")]
    BudgetExceeded(String),

    #[error("no nondegenerate basis found")]
    DegenerateData,

    #[error("Gram matrix is singular (condition number {cond:e})")]
    SingularGram { cond: f64 },

    #[error("design matrix is rank deficient (condition number {cond:e})")]
    RankDeficient { cond: f64 },

    #[error("dataset has no rows")]
    EmptyData,

    #[error("need {needed} rows but only {available} are available")]
    InsufficientRows { needed: usize, available: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error in {path}: {msg}")]
    Data { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors caused by bad input data, as opposed to configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Data { .. }
                | Error::Csv(_)
                | Error::EmptyData
                | Error::InsufficientRows { .. }
                | Error::RankDeficient { .. }
                | Error::SingularGram { .. }
                | Error::DegenerateData
                | Error::DimensionMismatch { .. }
        )
    }
}
