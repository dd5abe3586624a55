use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HgmpError>;

#[derive(Debug, Error)]
pub enum HgmpError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}, row {row}: {message}")]
    Format {
        file: PathBuf,
        row: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("node {node_type}[{index}] does not exist")]
    NoSuchNode { node_type: String, index: usize },

    #[error("edge {edge_type}[{position}] does not exist")]
    NoSuchEdge { edge_type: String, position: usize },

    #[error("no labeled items: {0}")]
    NoLabels(String),

    #[error("class {class} has {available} items but k={k} needs at least {needed}")]
    InsufficientClass {
        class: usize,
        available: usize,
        k: usize,
        needed: usize,
    },

    #[error("unknown backbone `{0}` (expected gcn or gat)")]
    UnknownBackbone(String),

    #[error("encoder is frozen")]
    Frozen,

    #[error("encoder must be frozen before prompt tuning")]
    NotFrozen,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical error: {0}")]
    Numerical(String),
}

impl HgmpError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HgmpError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(file: impl Into<PathBuf>, row: usize, message: impl Into<String>) -> Self {
        HgmpError::Format {
            file: file.into(),
            row,
            message: message.into(),
        }
    }

    /// Process exit code: 2 for I/O and configuration problems, 1 for
    /// everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HgmpError::Io { .. } | HgmpError::Format { .. } | HgmpError::Config(_) => 2,
            _ => 1,
        }
    }
}
