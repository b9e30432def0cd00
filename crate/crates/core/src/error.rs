//! Error type shared by every module of the toolkit.
//!
//! Errors are grouped into three kinds that map onto the CLI exit codes:
//! usage (1), data (2) and numerical (3).

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("points file {path}, line {line}: {message}")]
    PointsCsv {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("fold spec error: {0}")]
    FoldSpec(String),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("shape mismatch in {op}: {message}")]
    Shape { op: &'static str, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(op: &'static str, message: impl Into<String>) -> Self {
        Error::Shape {
            op,
            message: message.into(),
        }
    }

    /// CLI exit code for this error: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 1,
            Error::Io { .. }
            | Error::Image { .. }
            | Error::PointsCsv { .. }
            | Error::Dataset(_)
            | Error::FoldSpec(_)
            | Error::CheckpointFormat(_)
            | Error::Shape { .. } => 2,
            Error::Numerical(_) => 3,
        }
    }
}
