use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {layer}: {detail}")]
    Shape { layer: String, detail: String },

    #[error("invalid layer shape: {0}")]
    InvalidShape(String),

    #[error("bad magic: not a TNSR tensor file")]
    BadMagic,

    #[error("unsupported tensor file version {0}")]
    UnsupportedVersion(u8),

    #[error("truncated payload: header declares {expected} bytes, file has {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("dimension overflow: element count of {0:?} does not fit in memory")]
    DimOverflow(Vec<u64>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("profile infeasible: {0}")]
    Infeasible(String),

    #[error("invalid hardware profile: {0}")]
    InvalidProfile(String),

    #[error("target below current support: q={q}, current nonzeros={nonzeros}")]
    TargetBelowSupport { q: usize, nonzeros: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },
}

impl Error {
    pub(crate) fn shape(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
