use std::path::PathBuf;

use serde::Serialize;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite output from {op} ({stats})")]
    NonFinite { op: &'static str, stats: String },

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("function is not deterministic: two forward passes gave {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("wav: {0}")]
    Wav(String),

    #[error("format: {0}")]
    Format(String),

    #[error("degenerate labels: {0}")]
    Labels(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable name of the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::NotScalar(_) => "not_scalar",
            Error::NonDeterministic { .. } => "non_deterministic",
            Error::Config(_) => "config",
            Error::Bounds(_) => "bounds",
            Error::Wav(_) => "wav",
            Error::Format(_) => "format",
            Error::Labels(_) => "labels",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            error: self.kind(),
            message: self.to_string(),
        }
    }
}

/// JSON shape of an error as printed by command-line tools.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub message: String,
}
