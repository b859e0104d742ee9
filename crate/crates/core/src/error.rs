use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (run seed {seed}, batch seeds {batch_seeds:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        seed: u64,
        batch_seeds: Vec<u64>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } | Error::Input(_) => 3,
            _ => 1,
        }
    }
}
