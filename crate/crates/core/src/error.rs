use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    Data(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("degradation {spec_id} failed on image {image}: {source}")]
    Degradation {
        spec_id: usize,
        image: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite loss at iteration {iteration}")]
    NanLoss { iteration: usize },

    #[error("stage `{stage}` failed (artifact {artifact}): {source}")]
    Stage {
        stage: String,
        artifact: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Param(msg.into()))
}

pub(crate) fn shape<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
