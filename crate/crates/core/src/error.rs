//! Error type shared by every module in this crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or group-boundary mismatch between operands.
    #[error("shape error: {0}")]
    Shape(String),

    /// A code passed to `pack` does not fit the requested bit width.
    #[error("code {value} at ({row}, {col}) out of range [{lo}, {hi}] for {bits}-bit storage")]
    CodeRange {
        row: usize,
        col: usize,
        value: i32,
        lo: i32,
        hi: i32,
        bits: u8,
    },

    /// Invalid argument (empty input, bad grid, too-short stream, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Tensor file does not start with the expected magic bytes.
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 8], found: [u8; 8] },

    /// Tensor file version this build does not understand.
    #[error("unsupported tensor file version {0}")]
    Version(u16),

    /// Unknown dtype tag in a tensor file header.
    #[error("unknown dtype tag {0}")]
    DType(u8),

    /// Payload shorter than the header promised.
    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: u64, actual: u64 },

    /// Header payload length disagrees with the shape.
    #[error("payload/shape mismatch: header declares {header} bytes, shape implies {implied}")]
    PayloadMismatch { header: u64, implied: u64 },

    /// Non-finite float encountered while loading a tensor file.
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    /// Numerical failure (e.g. Cholesky on an indefinite matrix).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Unknown layer/sequence handle.
    #[error("lookup error: {0}")]
    Lookup(String),

    /// Operation invalid in the current state (e.g. attention over an empty sequence).
    #[error("state error: {0}")]
    State(String),

    /// Invalid model or simulator configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Workload cannot fit the hardware even at batch 1.
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
