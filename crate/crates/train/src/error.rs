use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] fusionseg_core::Error),
    #[error(transparent)]
    Model(#[from] fusionseg_nn::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (lr {lr:e})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        lr: f64,
        loss: f64,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("malformed {what} in {path}: {reason}")]
    Format {
        what: &'static str,
        path: PathBuf,
        reason: String,
    },
}

pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
