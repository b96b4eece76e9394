use std::path::PathBuf;

use distillmt_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("config error: {0}")]
    Config(String),
    #[error("vocabulary error: {0}")]
    Vocabulary(String),
    #[error("length error: sequence of {len} tokens exceeds max_seq_len {max}")]
    Length { len: usize, max: usize },
    #[error("data error: {0}")]
    Data(String),
    #[error("distribution error: {0}")]
    Distribution(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("measurement error: {0}")]
    Measurement(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
