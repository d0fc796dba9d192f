use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("no interactions survive {k}-core filtering")]
    EmptyAfterFilter { k: usize },

    #[error("dataset has {0} distinct items, at least 2 are required")]
    TooFewItems(usize),

    #[error("split failed: {0}")]
    Split(String),

    #[error("embedding codec: {0}")]
    Codec(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown item id `{0}`")]
    UnknownItem(String),

    #[error("unknown user id `{0}`")]
    UnknownUser(String),

    #[error("no {kind} embedding for id `{id}`")]
    MissingEmbedding { kind: &'static str, id: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("total conflict between opinions (beta = {0})")]
    TotalConflict(f64),

    #[error("label vector is not one-hot")]
    InvalidOneHot,

    #[error("uncertainty mass must be positive")]
    ZeroUncertainty,

    #[error("image vector at position {0} has zero norm")]
    ZeroNormImage(usize),

    #[error("empty sequence")]
    EmptySequence,

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
