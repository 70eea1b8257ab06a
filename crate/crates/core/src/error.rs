//! Crate-wide error type. Variants mirror the failure classes the toolchain
//! distinguishes at its boundaries; the CLI maps them onto exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid static configuration (dimensions, schedules, flag values).
    #[error("config error: {0}")]
    Config(String),
    /// An index or count outside its documented range.
    #[error("range error: {0}")]
    Range(String),
    /// Runtime state does not match what the operation requires
    /// (e.g. cache row counts out of step with the schedule).
    #[error("state error: {0}")]
    State(String),
    /// Tensor shapes disagree.
    #[error("shape error: {0}")]
    Shape(String),
    /// A mask row leaves a query with nothing to attend to, or mask
    /// dimensions disagree with the tensors.
    #[error("mask error: {0}")]
    Mask(String),
    /// A file or document is malformed or has an unsupported version.
    #[error("format error: {0}")]
    Format(String),
    /// An artifact was produced for a different model layout or calibration.
    #[error("fingerprint mismatch: {0}")]
    FingerprintMismatch(String),
    /// Inputs that are well-formed but mutually inconsistent.
    #[error("input error: {0}")]
    Input(String),
    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
