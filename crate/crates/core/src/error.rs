use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column: {0}")]
    MissingColumn(String),
    #[error("dataset has no valid rows")]
    EmptyDataset,
    #[error("invalid gaussian sigma {0}, must be > 0")]
    InvalidSigma(f64),
    #[error("trace too short: {len} usable steps, need at least {needed}")]
    TraceTooShort { len: usize, needed: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("bad magic bytes in weight file")]
    BadMagic,
    #[error("unsupported weight file version {0}")]
    VersionUnsupported(u16),
    #[error("weight file checksum mismatch")]
    ChecksumMismatch,
    #[error("targets have zero variance")]
    ZeroVariance,
    #[error("insufficient history: have {have}, need {need}")]
    InsufficientHistory { have: usize, need: usize },
    #[error("no client candidates in round")]
    EmptyRound,
    #[error("throughput trace exhausted at {at_s:.3} s")]
    TraceExhausted { at_s: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Configuration and shape problems are the caller's fault; everything
    /// else is a runtime failure. Used by the CLI to choose an exit code.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::ShapeMismatch(_)
                | Error::MissingColumn(_)
                | Error::InvalidSigma(_)
                | Error::EmptyDataset
                | Error::TraceTooShort { .. }
                | Error::BadMagic
                | Error::VersionUnsupported(_)
                | Error::ChecksumMismatch
        )
    }
}
