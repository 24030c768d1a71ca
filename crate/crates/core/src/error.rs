use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("trigger index out of range: {index} >= {len}")]
    TriggerOutOfRange { index: usize, len: usize },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("empty file: {0}")]
    EmptyFile(String),

    #[error("document {doc_id}: {message}")]
    Document { doc_id: String, message: String },

    #[error("no event types survive filter (min {0} instances)")]
    EmptyFilter(usize),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("cannot draw disjoint query after {0} attempts")]
    DisjointQuery(usize),

    #[error("COS requires an embedding table")]
    MissingEmbeddings,

    #[error("numerical overflow")]
    NumericalOverflow,

    #[error("non-finite loss at epoch {epoch}, episode {episode} (replay with seed {seed}, stream {stream})")]
    NonFiniteLoss {
        epoch: usize,
        episode: usize,
        seed: u64,
        stream: u64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
