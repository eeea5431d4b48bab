use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaeError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("activation cache does not match the network: {0}")]
    Consistency(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("model state: {0}")]
    State(String),

    #[error("load error at row {row}, column {column}: {message}")]
    Load {
        row: usize,
        column: String,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("snapshot format: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BaeError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(BaeError::Shape(msg.into()))
}

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(BaeError::Parameter(msg.into()))
}
