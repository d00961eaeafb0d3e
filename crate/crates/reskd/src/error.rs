//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible dimensions between two operands.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    /// An argument outside its mathematical domain (negative temperature,
    /// empty dataset, label out of range, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// An activation trace that was not produced by the network it is used
    /// with, or whose network has been mutated since the forward pass.
    #[error("stale or mismatched activation trace: {0}")]
    Trace(String),

    /// Layer or stage index out of range.
    #[error("index {index} out of range ({context} has {len})")]
    Index {
        context: String,
        index: usize,
        len: usize,
    },

    /// Training produced non-finite losses or weights.
    #[error("training diverged in {role}: {msg}")]
    Training { role: String, msg: String },

    /// Optimizer fed non-finite gradients.
    #[error("optimizer divergence: {0}")]
    Optimizer(String),

    /// Malformed input file (IDX, CSV, JSON model/config).
    #[error("parse error in {source_name}: {msg}")]
    Parse { source_name: String, msg: String },

    /// A loaded structure violates its schema (field named in the message).
    #[error("validation error: {0}")]
    Validation(String),

    /// Invalid configuration; lists every violation at once.
    #[error("invalid config:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub(crate) fn parse(source_name: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            msg: msg.into(),
        }
    }
}
