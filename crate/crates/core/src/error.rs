use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid factor spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no novel combinations exist for a single-factor grid")]
    NoNovelCombinations,

    #[error("store checksum mismatch: expected {expected}, found {found}")]
    ChecksumMismatch { expected: String, found: String },

    #[error("store shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid store: {0}")]
    InvalidStore(String),

    #[error("estimator undefined: {0}")]
    EstimatorUndefined(String),

    #[error("degenerate classifier: {0}")]
    DegenerateClassifier(String),

    #[error("id misalignment: {0}")]
    Misaligned(String),

    #[error("non-finite loss at step {step}; diagnostic snapshot at {snapshot:?}")]
    NonFiniteLoss { step: u64, snapshot: Option<PathBuf> },

    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io { path: path.into(), source })
    }
}
