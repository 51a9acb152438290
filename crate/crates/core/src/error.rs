use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid depth {0}: depths must be positive and finite")]
    InvalidDepth(f64),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value in {term}")]
    NonFinite { term: &'static str },

    #[error("window error: {0}")]
    Window(String),

    #[error("estimator backend has not been fitted")]
    NotFitted,

    #[error("optimization diverged at step {step}: {detail}")]
    Optimization { step: usize, detail: String },

    #[error("tiling error: {0}")]
    Tiling(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("taxonomy error: {0}")]
    Taxonomy(String),

    #[error("grouping error: {0}")]
    Grouping(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("pose error: {0}")]
    Pose(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("stage `{stage}` failed{}: {source}", frame.map(|f| format!(" at frame {f}")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        frame: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Wraps an error with the pipeline stage (and optionally frame) it came from.
    pub fn in_stage(self, stage: &'static str, frame: Option<usize>) -> Self {
        Error::Stage {
            stage,
            frame,
            source: Box::new(self),
        }
    }
}
