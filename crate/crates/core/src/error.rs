//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Tensor operation received non-conforming shapes.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A computation produced or received a NaN/Inf where finite values are required.
    NonFinite { context: String },
    /// Gradient was requested for a tensor that was never marked differentiable.
    UnmarkedTensor { op: &'static str },
    /// `grad` was called on a non-scalar output.
    NonScalarOutput { shape: Vec<usize> },
    /// Corpus file problems, with a 1-based line number when one applies.
    Corpus { line: Option<usize>, message: String },
    /// Invalid configuration value.
    Config(String),
    /// Checkpoint serialization problems (bad magic, version, truncation).
    Checkpoint(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")
            }
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::UnmarkedTensor { op } => {
                write!(f, "`{op}` requested a gradient for an unmarked tensor")
            }
            Error::NonScalarOutput { shape } => {
                write!(f, "gradient output must be scalar, got shape {shape:?}")
            }
            Error::Corpus { line, message } => match line {
                Some(n) => write!(f, "corpus error at line {n}: {message}"),
                None => write!(f, "corpus error: {message}"),
            },
            Error::Config(msg) => write!(f, "invalid config: {msg}"),
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
