use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mask contains no foreground pixel")]
    EmptyMask,
    #[error("contour has {0} points, at least 4 are required")]
    DegenerateContour(usize),
    #[error("expected {expected} keypoints, got {got}")]
    InvalidKeypointCount { expected: usize, got: usize },
    #[error("contour has {got} points, at least {needed} are required")]
    TooFewContourPoints { needed: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown region id {0}")]
    UnknownRegion(usize),
    #[error("degenerate batch: need at least 2 subjects with 2 sequences each ({0})")]
    DegenerateBatch(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("empty embedding set: {0}")]
    EmptySet(&'static str),
    #[error("no impostor pairs between gallery and probe")]
    NoImpostors,
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
    #[error("figure does not fit in a {width}x{height} frame")]
    FigureOutOfFrame { width: usize, height: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("frame {frame}")]
    AtFrame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_frame(frame: usize) -> impl FnOnce(Error) -> Error {
        move |e| Error::AtFrame {
            frame,
            source: Box::new(e),
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
