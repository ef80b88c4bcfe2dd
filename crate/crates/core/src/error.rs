//! Error taxonomy shared across the workspace.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or schema violation.
    #[error("config: {0}")]
    Config(String),

    /// Shape or dimension mismatch between cooperating components.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An operation that needs data received an empty batch.
    #[error("empty batch: {0}")]
    EmptyBatch(String),

    /// A gradient or loss became NaN/inf; carries context for the dump.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Referenced task id has no registered head or data.
    #[error("unknown task: {0}")]
    UnknownTask(String),

    /// Operation not defined for this variant (e.g. softmax second-order path).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Required input data is missing or malformed.
    #[error("missing data: {0}")]
    MissingData(String),

    /// A component that must be trained first is still at initialization.
    #[error("untrained component: {0}")]
    Untrained(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
