use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },

    #[error("mask is empty")]
    EmptyMask,

    #[error("catalog too small: need {needed} usable categories, have {available}")]
    CatalogTooSmall { needed: usize, available: usize },

    #[error("placement failed after {attempts} scene resamples (scene too crowded for canvas)")]
    PlacementFailed { attempts: u32 },

    #[error("validation failed for {context}: {message}")]
    Validation { context: String, message: String },

    #[error("missing file referenced by {context}: {path}")]
    MissingFile { context: String, path: PathBuf },

    #[error("model failure: {0}")]
    Model(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("malformed density file: {0}")]
    DensityFormat(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn validation(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Whether the error stems from bad input (as opposed to a runtime failure).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::DimensionMismatch { .. }
                | Error::EmptyMask
                | Error::CatalogTooSmall { .. }
                | Error::Validation { .. }
                | Error::MissingFile { .. }
                | Error::Json { .. }
                | Error::DensityFormat(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
