//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaltError {
    /// Incompatible tensor shapes, e.g. a matmul whose inner dimensions disagree.
    #[error("{op}: shape mismatch: {lhs} vs {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    /// A configuration value violates a documented invariant.
    #[error("config: {0}")]
    Config(String),

    /// A caller broke an API precondition (non-scalar loss, empty input, t = 0, ...).
    #[error("contract: {0}")]
    Contract(String),

    /// Malformed data: labels out of range, corrupt stream files, ...
    #[error("data: {0}")]
    Data(String),

    /// An attention score row contained no finite entry before softmax.
    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// Unreadable or version-mismatched binary file.
    #[error("format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, MaltError>;

pub(crate) fn shape_str(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}
