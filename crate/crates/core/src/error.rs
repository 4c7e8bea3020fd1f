use std::path::PathBuf;

use acc_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown phoneme {0:?}")]
    UnknownPhoneme(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("phoneme map incomplete: {0} has no entry")]
    IncompleteMap(String),
    #[error("phoneme map contradicts the reference table: {phoneme} {dimension} should be {expected}, found {found}")]
    ContradictsTable1 { phoneme: String, dimension: String, expected: String, found: String },
    #[error("{path}: intervals overlap at line {line}")]
    Overlap { path: String, line: usize },
    #[error("{path}: intervals out of order at line {line}")]
    Order { path: String, line: usize },
    #[error("{0}")]
    Format(String),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("{utterance}: audio lasts {audio_s:.3} s but video lasts {video_s:.3} s")]
    LengthMismatch { utterance: String, audio_s: f64, video_s: f64 },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("need at least {needed} speakers of each gender, have {male} M / {female} F")]
    InsufficientSpeakers { needed: usize, male: usize, female: usize },
    #[error("checkpoint mode is {found}, expected {expected}")]
    WrongMode { expected: String, found: String },
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for malformed or inconsistent input data, as opposed to numeric failures.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::NonFiniteLoss { .. } | Error::Config(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
