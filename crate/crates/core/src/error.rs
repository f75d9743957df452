//! Error type shared by every stage of the pipeline.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// A caller-supplied value violates an operation precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An input document parsed but failed validation.
    #[error("invalid {what}: {reason}")]
    Validation { what: String, reason: String },

    #[error("segmentation failed for window at ({x0}, {y0}): {source}")]
    Scan {
        x0: usize,
        y0: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("segmentation backend '{backend}' failed: {reason}")]
    Backend { backend: String, reason: String },

    #[error("training failed: {0}")]
    Training(String),

    #[error("synthetic generation failed: {0}")]
    Generation(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
