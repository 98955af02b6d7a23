//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("frequency capacity exceeded: requested {requested} tone slots, only {available} fit below Nyquist at {sample_rate} Hz")]
    Capacity {
        requested: usize,
        available: usize,
        sample_rate: u32,
    },

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("k-means infeasible: {distinct} distinct rows < k = {k}")]
    Infeasible { distinct: usize, k: usize },

    #[error("training error: {0}")]
    Training(String),

    #[error("data integrity error: {0}")]
    DataIntegrity(String),

    #[error("pipeline integrity error: {0}")]
    Pipeline(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
