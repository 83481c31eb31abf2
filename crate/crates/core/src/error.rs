use thiserror::Error;

/// Errors produced by the structured-latent library.
#[derive(Debug, Error)]
pub enum SlatError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("structure mismatch: {0}")]
    StructureMismatch(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("training diverged at iteration {iteration}: loss {loss}")]
    Diverged { iteration: usize, loss: f64 },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SlatError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(SlatError::Shape(msg.into()))
}
