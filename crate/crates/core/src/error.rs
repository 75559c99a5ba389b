use std::path::PathBuf;

use decseg_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("failed to load sample `{stem}`: {reason}")]
    Load { stem: String, reason: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite loss in term {term}: {value}")]
    NonFinite { term: &'static str, value: f64 },
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
