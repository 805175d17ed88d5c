//! Crate-wide error type with stable exit-code classes for the CLI.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch in a linear-algebra or layer operation.
    #[error("{op}: dimension mismatch ({}x{} vs {}x{})", lhs.0, lhs.1, rhs.0, rhs.1)]
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    /// Caller misuse: bad arguments, empty inputs, invalid ranges.
    #[error("usage: {0}")]
    Usage(String),

    /// Config file problems; collects every bad key before reporting.
    #[error("config: {}", problems.join("; "))]
    Config { problems: Vec<String> },

    /// Data-level failure (no matching records, inconsistent series, ...).
    #[error("data: {0}")]
    Data(String),

    /// Input file is missing a required column.
    #[error("schema: {0}")]
    Schema(String),

    /// A specific data row failed to parse or validate.
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },

    /// Non-finite values or other numeric breakdowns.
    #[error("numeric: {0}")]
    Numeric(String),

    /// Operation called in the wrong order (e.g. backward without forward).
    #[error("state: {0}")]
    State(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("checkpoint: bad magic bytes (not a checkpoint file)")]
    CheckpointMagic,

    #[error("checkpoint: version {found} unsupported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint: file truncated")]
    CheckpointTruncated,

    #[error("checkpoint: checksum mismatch (file corrupt)")]
    CheckpointChecksum,
}

impl Error {
    /// Exit-code contract: 0 success, 1 data/numeric error, 2 usage error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config { .. } => 2,
            _ => 1,
        }
    }
}
