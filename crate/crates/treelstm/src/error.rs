//! Error types shared across the crate.

use thiserror::Error;

/// Everything that can go wrong, from malformed input files to numeric
/// failures during training.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad flag, bad config key, or an invalid value for either.
    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed treebank line.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A sentence that is not a well-formed dependency tree.
    #[error("invalid tree in sentence {sentence}: {report}")]
    InvalidTree { sentence: usize, report: String },

    /// Malformed embedding file line.
    #[error("embedding format error at line {line}: {message}")]
    EmbeddingFormat { line: usize, message: String },

    /// Tensor shapes that do not line up.
    #[error("dimension error in {context}: {left:?} vs {right:?}")]
    Shape {
        context: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// Gold label outside the class range.
    #[error("label error: class {got} out of range for {classes} classes")]
    Label { got: usize, classes: usize },

    /// Backward called on something that is not a scalar.
    #[error("contract error: backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    /// Tape consumed twice.
    #[error("lifecycle error: tape already consumed by backward")]
    TapeConsumed,

    /// Mismatch between a model and the data it is applied to.
    #[error("data error: {0}")]
    Data(String),

    /// Corrupt or incompatible checkpoint file.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// NaN/Inf or a failed numeric check.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 usage, 2 data/format, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Parse { .. }
            | Error::InvalidTree { .. }
            | Error::EmbeddingFormat { .. }
            | Error::Shape { .. }
            | Error::Label { .. }
            | Error::Data(_)
            | Error::Checkpoint(_)
            | Error::Io(_) => 2,
            Error::NonScalarRoot { .. } | Error::TapeConsumed | Error::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
