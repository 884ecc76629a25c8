use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {layer}: {detail}")]
    Shape { layer: String, detail: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint: bad magic (expected STLANE01)")]
    BadMagic,

    #[error("checkpoint: truncated {0}")]
    Truncated(String),

    #[error("checkpoint: unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("checkpoint: missing parameter for layer `{0}`")]
    MissingParameter(String),

    #[error("checkpoint: malformed manifest: {0}")]
    Manifest(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("scene geometry: {0}")]
    Geometry(String),

    #[error("unknown stage `{0}`")]
    UnknownStage(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
