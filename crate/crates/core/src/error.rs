//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An operation needs samples that the input does not contain.
    #[error("empty population: {0}")]
    EmptyPopulation(String),

    /// Malformed input file; `line` is 1-based and counts the header.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A class index in `0..K` has no samples.
    #[error("class {0} has no samples")]
    MissingClass(usize),

    /// The requested statistic is undefined for this input.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Caller broke an API precondition (mismatched shapes, stale stats, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite values appeared where finite arithmetic was required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
