use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad input: wrong shape, out-of-range value, unknown layer, and so on.
    #[error("validation error: {0}")]
    Validation(String),

    /// Invalid architecture or training configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A loss component became NaN or infinite.
    #[error("training diverged{}: non-finite {component}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Divergence { step: Option<u64>, component: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
