use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model config: {0}")]
    Config(String),

    #[error("sequence of {len} steps exceeds max_seq_len {max}; crop before embedding")]
    SequenceTooLong { len: usize, max: usize },

    #[error("input mismatch: {0}")]
    Input(String),

    #[error("empty batch: no valid points to compute a loss over")]
    EmptyBatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite loss at epoch {epoch}, step {step}: cls={cls}, reg={reg}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        cls: f64,
        reg: f64,
    },

    #[error("step {step} out of range for {total} total steps")]
    StepOutOfRange { step: usize, total: usize },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Core(#[from] talkit_core::Error),

    #[error("i/o error on {path}: {source}")]
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
}
