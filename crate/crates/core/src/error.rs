use std::path::PathBuf;

/// Errors produced across the demapping library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument fell outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid constellation `{id}`: {reason}")]
    InvalidConstellation { id: String, reason: String },

    #[error("catalog parse error{}: {message}", .id.as_ref().map(|i| format!(" in `{i}`")).unwrap_or_default())]
    Catalog { id: Option<String>, message: String },

    #[error("unknown constellation `{0}`")]
    UnknownConstellation(String),

    #[error("symbol {symbol} out of range for `{id}` ({size} symbols)")]
    UnknownSymbol { id: String, symbol: usize, size: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("layout hash mismatch: file was built for {file}, current layout is {current}")]
    LayoutMismatch { file: String, current: String },

    #[error("training diverged: non-finite loss at epoch {epoch} (lr {lr}, dataset `{dataset}`)")]
    NonFiniteLoss { epoch: usize, lr: f64, dataset: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
