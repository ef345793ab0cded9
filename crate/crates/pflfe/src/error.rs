//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible with an operation's signature.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: String, detail: String },

    /// A forward or backward pass produced NaN or Inf.
    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    /// Gradient missing, non-finite, or backward misused.
    #[error("gradient error: {0}")]
    Gradient(String),

    /// An embedding norm fell below 1e-12, so normalization is undefined.
    #[error("degenerate embedding: norm {0:e} below 1e-12")]
    DegenerateEmbedding(f64),

    /// Invalid model, data, or run configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Dataset construction or access failure.
    #[error("data error: {0}")]
    Data(String),

    /// Federation protocol misuse (empty dataset, client overlap, ...).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Malformed checkpoint or dataset file.
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    /// Report emission failure, tagged with the offending path.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            op: op.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
