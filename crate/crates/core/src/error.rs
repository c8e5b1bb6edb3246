//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad flags, bad config values, or mismatched layer wiring.
    #[error("configuration error: {0}")]
    Config(String),
    /// Inputs too empty to operate on (no valid pixels, empty masks).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    /// Input files or values violate a data contract.
    #[error("data error: {0}")]
    Data(String),
    /// A non-finite value surfaced where the pipeline requires finite math.
    #[error("numeric abort: {0}")]
    NumericAbort(String),
    /// Malformed raster/checkpoint/CSV bytes.
    #[error("format error: {0}")]
    Format(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 1 usage, 2 data, 3 numeric abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::NumericAbort(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
