//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar argument fell outside the domain of a function.
    #[error("domain error in {op}: {value} is outside [{lo}, {hi}]")]
    Domain {
        op: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// Input that makes a kernel or recursion undefined (e.g. a zero vector).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `K_ss + lambda I` could not be factorized.
    #[error("degenerate kernel: K_ss + {lambda_eff:e}*I is not positive definite")]
    NotPositiveDefinite { lambda_eff: f64 },

    #[error("sigma calibration did not converge; last bracket [{lo}, {hi}]")]
    Calibration { lo: f64, hi: f64 },

    /// Malformed input file; `offset` is a byte offset or a row index depending on the format.
    #[error("format error in {path} at {offset}: {msg}")]
    Format {
        path: String,
        offset: u64,
        msg: String,
    },

    #[error("unsupported bundle version or magic in {path}: {msg}")]
    Version { path: PathBuf, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad numerical conditions rather than bad input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Domain { .. }
                | Error::Degenerate(_)
                | Error::NotPositiveDefinite { .. }
                | Error::Calibration { .. }
        )
    }

    /// True for errors raised while reading or validating datasets and bundles.
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::Format { .. } | Error::Version { .. } | Error::Io { .. } | Error::Json(_)
        )
    }
}
