//! Shared error type for the whole pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("user {user} has {count} interactions, need at least {required}")]
    TooFewInteractions {
        user: String,
        count: usize,
        required: usize,
    },

    #[error("negative sampling pool for user {user} has {available} items, need {required}")]
    NegativePoolTooSmall {
        user: String,
        available: usize,
        required: usize,
    },

    #[error("need at least {required} values to fit the OUT distribution, got {got}")]
    InsufficientOutSamples { got: usize, required: usize },

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("degenerate membership for interaction ({user}, {item}): {side} in every shadow set")]
    DegenerateMembership {
        user: String,
        item: String,
        side: &'static str,
    },

    #[error("{entity} id {id} out of range (size {size})")]
    IndexOutOfRange {
        entity: &'static str,
        id: usize,
        size: usize,
    },

    #[error("evaluation set contains only one class")]
    SingleClass,

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("manifest hash mismatch: recorded {recorded}, computed {computed}")]
    ManifestHashMismatch { recorded: String, computed: String },

    #[error("corrupt file {path}: {message}")]
    CorruptFile { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
