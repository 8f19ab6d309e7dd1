use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar or structural parameter violated its precondition.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// Tensor/image shapes are inconsistent with the operation's contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// Configuration file or degradation-space definition is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// Not enough source images to build the requested batch.
    #[error("pool error: {0}")]
    Pool(String),

    /// A pipeline phase was invoked before the artifacts it depends on exist.
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),

    /// Model weights are not in the state an operation requires.
    #[error("state error: {0}")]
    State(String),

    /// Checkpoint blob is malformed or does not match the model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
