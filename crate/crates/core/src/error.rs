use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("batch-norm running statistics are uninitialized; run at least one training step first")]
    UninitializedStats,

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("{path}:{line}: column '{column}': {message}")]
    Data {
        path: String,
        line: u64,
        column: String,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("schema mismatch: expected hash {expected}, found {found}")]
    SchemaMismatch { expected: String, found: String },

    #[error("cannot stratify: {0}")]
    Stratification(String),

    #[error("cannot interpolate class {class}: it has {count} row(s), need at least 2")]
    CannotInterpolate { class: usize, count: usize },

    #[error("{n} features exceed the exact enumeration limit of {limit}; use permutation sampling instead")]
    EnumerationLimit { n: usize, limit: usize },

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
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

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
