use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("corpus snapshot `{0}` has no chunks")]
    EmptySnapshot(String),

    #[error("retrieval returned no chunks")]
    EmptyRetrieval,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("duplicate doc_id `{0}` in snapshot")]
    DuplicateDocument(String),

    #[error("unknown doc_id `{0}`")]
    UnknownDocument(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no QA pair with disjoint gold documents exists")]
    NoDisjointPair,

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
