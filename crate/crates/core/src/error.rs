use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids (L={0}, N={1} vs L={2}, N={3})")]
    GridMismatch(f64, usize, f64, usize),

    #[error("unsupported Sobolev exponent s={0}; expected s in [-4, 2]")]
    UnsupportedNorm(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite state at t={t}")]
    NonFinite { t: f64 },

    #[error("noise is degenerate on retained mode k={mode} (alpha_k = {alpha})")]
    DegenerateNoise { mode: usize, alpha: f64 },

    #[error("steering failed: {0}")]
    Steering(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config field `{field}`: {message}")]
    ConfigSchema { field: String, message: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigSchema {
            field: field.into(),
            message: message.into(),
        }
    }
}
