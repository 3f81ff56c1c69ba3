use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("index {index} out of range for sequence of length {len}")]
    Index { index: usize, len: usize },

    #[error("gradient oracle error: {0}")]
    Oracle(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("batch error: {0}")]
    Batch(String),

    #[error("data error for instance {instance}: {reason}")]
    Data { instance: String, reason: String },

    #[error("no senses in inventory for ({lemma}, {pos})")]
    Inventory { lemma: String, pos: String },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("inventory validation failed: {0}")]
    InventoryFormat(String),

    #[error("checkpoint version {found} is incompatible with supported version {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint integrity error: {0}")]
    CheckpointIntegrity(String),

    #[error("non-finite loss at step {step} (parameter norm {param_norm})")]
    NonFiniteLoss { step: u64, param_norm: f64 },

    #[error("scoring error: {0}")]
    Scoring(String),

    #[error("cost comparison error: {0}")]
    Comparison(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
