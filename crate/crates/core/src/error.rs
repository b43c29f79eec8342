use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("keypoint parse error at frame {frame}: {message}")]
    KeypointParse { frame: usize, message: String },

    #[error("csv parse error at row {row}: {message}")]
    CsvParse { row: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("joint {joint} is never observed in the track")]
    JointNeverObserved { joint: &'static str },

    #[error("degenerate pose: {0}")]
    DegeneratePose(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("classes absent from training set: {0:?}")]
    MissingClasses(Vec<String>),

    #[error("sync failed: found {} peaks for {anchors} anchors (peak times {peaks:?})", peaks.len())]
    Sync { anchors: usize, peaks: Vec<f64> },

    #[error("manifest error in `{field}`: {message}")]
    Manifest { field: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }

    pub(crate) fn shape(message: impl Into<String>) -> Self {
        Error::Shape(message.into())
    }

    /// Stable category name used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::KeypointParse { .. } | Error::CsvParse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Manifest { .. } => "manifest",
            Error::JointNeverObserved { .. }
            | Error::DegeneratePose(_)
            | Error::Shape(_)
            | Error::InvalidInput(_)
            | Error::MissingClasses(_)
            | Error::Sync { .. } => "invariant",
            Error::Divergence { .. } => "training",
            Error::Checkpoint(_) => "checkpoint",
        }
    }
}
