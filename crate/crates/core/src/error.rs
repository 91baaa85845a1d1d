use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot normalize silent audio")]
    SilentAudio,

    #[error("clip too short: {duration:.3} s, need at least {required:.3} s")]
    TooShort { duration: f64, required: f64 },

    #[error("clip ({clip} frames) is longer than track ({track} frames)")]
    ClipTooLong { clip: usize, track: usize },

    #[error("no admissible candidate track")]
    NoCandidate,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("token {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("undefined cosine similarity for zero-norm rows: {0:?}")]
    ZeroNorm(Vec<String>),

    #[error("external client failed: {0}")]
    Client(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
