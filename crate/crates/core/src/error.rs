use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// The variants are grouped by the subsystem that raises them so that the CLI
/// can report a category alongside the message.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("duplicate slide id `{0}`")]
    DuplicateSlideId(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("tiling error: {0}")]
    Tiling(String),

    #[error("stain error: {0}")]
    Stain(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("risk questionnaire error: {0}")]
    Risk(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category name used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Manifest(_) | Error::DuplicateSlideId(_) => "manifest",
            Error::Split(_) => "split",
            Error::Image(_) => "image",
            Error::Tiling(_) => "tiling",
            Error::Stain(_) => "stain",
            Error::Model(_) => "model",
            Error::Training(_) => "training",
            Error::Evaluation(_) => "evaluation",
            Error::Risk(_) => "risk",
            Error::Config(_) => "config",
            Error::Serialization(_) => "serialization",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
