use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("segment [{start}, {end}] is empty after clipping to [0, {duration}]")]
    EmptyAfterClip { start: f64, end: f64, duration: f64 },

    #[error("{}", validation_message(.video_id, .index, .reason))]
    Validation {
        video_id: String,
        index: Option<usize>,
        reason: String,
    },

    #[error("format error in {path}: field `{field}`: {reason}")]
    Format {
        path: PathBuf,
        field: &'static str,
        reason: String,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("dimension mismatch for source `{source_name}`: expected {expected}, got {actual}")]
    DimMismatch {
        source_name: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn validation_message(video_id: &str, index: &Option<usize>, reason: &str) -> String {
    match index {
        Some(i) => format!("validation error in video `{video_id}`, instance {i}: {reason}"),
        None => format!("validation error in video `{video_id}`: {reason}"),
    }
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
}
