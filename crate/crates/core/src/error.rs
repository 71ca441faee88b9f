use thiserror::Error;

pub type Result<T> = std::result::Result<T, GpnError>;

#[derive(Debug, Error)]
pub enum GpnError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("perturbation error: {0}")]
    Perturbation(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("failed to load `{field}`: {message}")]
    Load { field: String, message: String },

    #[error("split error: {0}")]
    Split(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GpnError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        GpnError::Shape(msg.into())
    }

    pub(crate) fn load(field: impl Into<String>, msg: impl Into<String>) -> Self {
        GpnError::Load {
            field: field.into(),
            message: msg.into(),
        }
    }
}
