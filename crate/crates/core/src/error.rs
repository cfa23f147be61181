use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid GEV parameters: {0}")]
    InvalidParams(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("initialization failed: {0}")]
    InitializationFailed(String),
    #[error("too few draws: {0}")]
    TooFewDraws(String),
    #[error("empty sample")]
    EmptySample,
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("site alignment failure: {0}")]
    Alignment(String),
    #[error("no data left after filtering: {0}")]
    EmptyAfterFilter(String),
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
