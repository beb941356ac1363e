use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed corpus or config text, with the 1-based line it was found on.
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid IOB sequence: {0}")]
    Iob(String),

    #[error("invalid dependency tree: {0}")]
    Tree(String),

    /// A numeric function was called outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("training diverged at epoch {epoch}, step {step}: {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("not a checkpoint file (bad magic header)")]
    BadMagic,

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }
}
