use thiserror::Error;

/// Errors raised by the differentiable core.
#[derive(Debug, Error)]
pub enum DiffError {
    /// Operand shapes are incompatible for the requested operation.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    /// Invalid static configuration (layer sizes, embedding widths, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// API misuse, e.g. a variable from a foreign tape or mismatched gradients.
    #[error("usage error: {0}")]
    Usage(String),
    /// Malformed or incompatible checkpoint bytes.
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DiffError>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> DiffError {
    DiffError::Shape {
        op,
        detail: detail.into(),
    }
}
