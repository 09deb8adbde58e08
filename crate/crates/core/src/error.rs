use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not conform to an operation's requirements.
    #[error("shape error: {0}")]
    Shape(String),

    /// A computation produced or received NaN/Inf where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An operation was called in a way its contract forbids (e.g. backward on a
    /// non-scalar node).
    #[error("usage error: {0}")]
    Usage(String),

    /// An argument is outside its documented range.
    #[error("range error: {0}")]
    Range(String),

    /// A model or dataset container failed to parse or is internally inconsistent.
    #[error("model format error: {0}")]
    ModelFormat(String),

    /// Experiment configuration failed validation. The string names the offending
    /// field path.
    #[error("config validation error: {0}")]
    Config(String),

    /// All restarts of a solver diverged or the solve is otherwise unrecoverable.
    #[error("solver error: {0}")]
    Solver(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the CLI: 2 config validation, 3 I/O, 4 solver failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } | Error::Image(_) => 3,
            Error::Solver(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
