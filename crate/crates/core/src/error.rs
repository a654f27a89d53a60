use thiserror::Error;

/// Errors produced by the tensor, decomposition, layer and training code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrlError {
    #[error("invalid mode {mode} for a tensor of order {order}")]
    InvalidMode { mode: usize, order: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("operation not supported for {0} weights")]
    UnsupportedDecomposition(&'static str),

    #[error("rank {rank} exceeds the enumeration limit of {limit}")]
    EnumerationLimit { rank: usize, limit: usize },

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for TrlError {
    fn from(e: std::io::Error) -> Self {
        TrlError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, TrlError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(TrlError::Shape(msg.into()))
}
