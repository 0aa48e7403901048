use thiserror::Error;

pub type Result<T, E = GppsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GppsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("group {group} has no rows")]
    EmptyGroup { group: usize },

    #[error("group {group} has no rows with label {label}")]
    EmptyStratum { group: usize, label: u8 },

    #[error("stratum (group {group}, label {label}) has {size} rows, too few to appear in all {splits} splits")]
    StratumTooSmall {
        group: usize,
        label: u8,
        size: usize,
        splits: usize,
    },

    #[error("covariance matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("csv error at row {row}, column {column}: {message}")]
    CsvParse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("non-finite training loss after {iterations} iterations")]
    NonFiniteLoss { iterations: usize },

    #[error("{0} is undefined for these inputs")]
    Undefined(String),

    #[error("acceptance level {gamma} is not achievable (maximum {max})")]
    Infeasible { gamma: f64, max: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GppsError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GppsError::InvalidInput(msg.into())
    }
}
