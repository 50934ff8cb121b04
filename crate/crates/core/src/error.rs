use std::path::PathBuf;

use thiserror::Error;

/// Failure modes of the checkpoint codec. Each one is distinct so callers
/// can tell a foreign file from a damaged one.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic: expected \"PRZK\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: {0}")]
    Truncated(String),
    #[error("shape table mismatch: {0}")]
    ShapeMismatch(String),
    #[error("malformed spec descriptor: {0}")]
    Descriptor(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("surgery error: {0}")]
    Surgery(String),

    #[error("checkpoint {path}: {kind}")]
    Checkpoint { path: PathBuf, kind: CheckpointError },

    #[error("training diverged: non-finite gradient in layer {layer} ({detail})")]
    Divergence { layer: usize, detail: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("unsupported resampling direction: {0}")]
    UnsupportedDirection(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("patient leakage: {0}")]
    Leakage(String),

    #[error("missing artifact {path}: run `prorez {hint}` first")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("stale artifact {path}: {detail}")]
    StaleArtifact { path: PathBuf, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::MissingArtifact { .. } | Error::StaleArtifact { .. } => 3,
            Error::Divergence { .. } | Error::Numeric(_) | Error::UndefinedMetric(_) => 5,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
