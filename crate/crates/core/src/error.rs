use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Num(#[from] numcore::NumError),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("node value overflow ({0}); SCM must be resampled")]
    Overflow(String),
    #[error("counterfactual replay needs the original noise record: {0}")]
    MissingNoise(String),
    #[error("feature count mismatch: context has {context}, query has {query}")]
    FeatureMismatch { context: usize, query: usize },
    #[error("{features} features exceed the model's {max} feature slots")]
    TooManyFeatures { features: usize, max: usize },
    #[error("unsupported checkpoint version {0}")]
    UnknownVersion(u32),
    #[error("corrupt checkpoint: expected {expected} bytes, found {actual}")]
    Corrupt { expected: usize, actual: usize },
    #[error("{0} already exists (pass --force to overwrite)")]
    Exists(String),
    #[error("graph error: {0}")]
    Graph(String),
}

impl Error {
    pub fn io(path: &Path, message: impl Into<String>) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
