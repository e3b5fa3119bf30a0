use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the engine.
///
/// The variants map onto the process exit codes used by the command-line
/// front end: configuration, shape and usage problems are caller mistakes,
/// everything else is a runtime failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("estimator diverged at iteration {iteration} (last finite value: {last_finite:?})")]
    Divergence {
        iteration: usize,
        last_finite: Option<f64>,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid caller input rather than by a
    /// failed computation.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Shape(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
