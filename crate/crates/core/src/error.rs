use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("label {label} out of range for {classes} classes (row {row})")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parameter length mismatch: expected {expected}, got {actual}")]
    ParamLength { expected: usize, actual: usize },

    #[error("allreduce: rank {rank} contributed {actual} values, rank 0 contributed {expected}")]
    ContributionLength {
        rank: usize,
        expected: usize,
        actual: usize,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("config key `{key}`{}: {msg}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config {
        key: String,
        line: Option<usize>,
        msg: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("worker {rank} failed: {source}")]
    WorkerFailed {
        rank: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Context {
        context: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Tags an error with the module it surfaced from.
    pub fn within(self, context: &'static str) -> Self {
        Error::Context {
            context,
            source: Box::new(self),
        }
    }
}
