use diffcore::DiffError;
use thiserror::Error;

/// Errors surfaced by the navigation fine-tuning stack.
#[derive(Debug, Error)]
pub enum NavError {
    /// Invalid configuration value or combination.
    #[error("configuration error: {0}")]
    Config(String),
    /// An operation was called with arguments outside its contract.
    #[error("usage error: {0}")]
    Usage(String),
    /// Scene generation could not satisfy its connectivity constraints.
    #[error("scene generation failed for seed {seed}: {detail}")]
    Generation { seed: u64, detail: String },
    /// No path exists between two cells.
    #[error("goal unreachable: {0}")]
    Unreachable(String),
    /// Malformed artifact on disk.
    #[error("format error: {0}")]
    Format(String),
    /// Training stopped after repeated failures.
    #[error("training aborted: {0}")]
    Aborted(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NavError>;
