use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Load { path: PathBuf, line: u64, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("label vector has a single class ({0} rows)")]
    SingleClass(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("column mismatch: model expects {expected} columns, got {got}")]
    ColumnMismatch { expected: usize, got: usize },
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("fit failed for {learner}: {msg}")]
    Fit { learner: String, msg: String },
    #[error("{0}")]
    Numerical(String),
    #[error("{source} (after {seconds:.3}s)")]
    Timed {
        seconds: f64,
        #[source]
        source: Box<Error>,
    },
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
