use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("parse error at data row {row}, column `{column}`: cannot read `{value}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("sample size error: need at least {needed} observations, got {got}")]
    SampleSize { needed: usize, got: usize },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("covariance matrix is not positive semi-definite")]
    NotPsd,

    #[error("observations outside the fitted support at indices {0:?}")]
    OutsideSupport(Vec<usize>),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
