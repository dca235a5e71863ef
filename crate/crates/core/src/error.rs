//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate parameter block `{0}`")]
    DuplicateBlock(String),
    #[error("unknown parameter block `{0}`")]
    UnknownBlock(String),
    #[error("dimension mismatch in `{block}`: expected {expected}, got {got}")]
    DimMismatch {
        block: String,
        expected: String,
        got: String,
    },
    #[error("parameter store layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("non-finite gradient in block `{0}`")]
    NonFiniteGrad(String),
    #[error("softmax: every entry is masked")]
    AllMasked,
    #[error("invalid dependency matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid forest: {0}")]
    InvalidForest(String),
    #[error("a dependency matrix needs at least two agents")]
    TooFewAgents,
    #[error("no available action")]
    NoAvailableAction,
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("environment: {0}")]
    Env(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
