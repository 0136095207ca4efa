use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },

    #[error("{0}")]
    InvalidArgument(String),

    /// A dataset directory or file failed validation.
    #[error("dataset {path}: {message}")]
    Dataset { path: PathBuf, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Weights and configuration disagree on the parameter layout.
    #[error("checkpoint/config mismatch: checkpoint has {checkpoint}, config expects {config}")]
    LayoutMismatch { checkpoint: String, config: String },

    #[error("unknown node id {0:?}")]
    UnknownNode(String),

    #[error("training: {0}")]
    Training(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parsable category used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite { .. } => "non-finite",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Dataset { .. } => "dataset",
            Error::Checkpoint(_) => "checkpoint",
            Error::LayoutMismatch { .. } => "config-mismatch",
            Error::UnknownNode(_) => "unknown-node",
            Error::Training(_) => "training",
            Error::Io { .. } => "io",
            Error::Serde(_) => "serialization",
        }
    }
}
