use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed NIfTI header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("{path} is not a single-channel 3D image (dims {dims:?})")]
    NotThreeDimensional { path: PathBuf, dims: Vec<i64> },

    #[error("unsupported NIfTI datatype code {code} in {path}")]
    UnsupportedDatatype { path: PathBuf, code: i16 },

    #[error("invalid voxel spacing {0:?}: every component must be positive and finite")]
    InvalidSpacing([f64; 3]),

    #[error("invalid shape {0:?}: every extent must be at least 1")]
    InvalidShape([usize; 3]),

    #[error("non-finite value at voxel {0:?}")]
    NonFinite([usize; 3]),

    #[error("mask is not binary: value {value} at voxel {index:?}")]
    NonBinary { index: [usize; 3], value: f64 },

    #[error("shape or spacing mismatch: {0}")]
    Mismatch(String),

    #[error("data integrity error: {0}")]
    Integrity(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty structure: {0}")]
    EmptyStructure(String),

    #[error("manifest error at line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error("fold plan error: {0}")]
    FoldPlan(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
