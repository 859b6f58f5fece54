use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },

    #[error("loss node must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("no regular nodes to score")]
    NoRegularNodes,

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },

    #[error("dimension mismatch: checkpoint expects {expected}, sample has {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("cannot split {topologies} topologies into {folds} folds")]
    TooManyFolds { folds: usize, topologies: usize },

    #[error("unknown {kind}: {value}")]
    Unknown { kind: &'static str, value: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
