use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed an argument outside the operation's domain.
    #[error("usage error: {0}")]
    Usage(String),

    /// A file did not match its binary or textual format.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("invalid depth {0}: must be finite and strictly positive")]
    InvalidDepth(f64),

    #[error("no valid depth around pixel ({x}, {y})")]
    NoDepth { x: f64, y: f64 },

    #[error("pixel ({x}, {y}) outside {width}x{height} image")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Manifest or config validation failure. `frame` is set when the
    /// failing field belongs to a specific frame.
    #[error("validation error{}: field `{field}`: {message}", frame.map(|i| format!(" in frame {i}")).unwrap_or_default())]
    Validation {
        frame: Option<usize>,
        field: String,
        message: String,
    },

    /// Wraps another error with the frame index it was raised for.
    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("episode `{episode}`: {source}")]
    Episode {
        episode: String,
        #[source]
        source: Box<Error>,
    },

    /// Wraps a pipeline error with the sweep position it was raised at.
    #[error("level {level_ms} ms, trial {trial}: {source}")]
    Trial {
        level_ms: f64,
        trial: usize,
        #[source]
        source: Box<Error>,
    },

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
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn validation(frame: Option<usize>, field: &str, msg: impl Into<String>) -> Self {
        Error::Validation {
            frame,
            field: field.to_string(),
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad caller input rather than data or I/O.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Usage(_))
    }
}
