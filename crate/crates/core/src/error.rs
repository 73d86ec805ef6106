use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("construction error: {0}")]
    Construction(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("integration error at step {step}: {reason}")]
    Integration { step: usize, reason: String },

    #[error("non-finite loss at step {step} (batch records {records:?}, flow times {times:?})")]
    NonFiniteLoss {
        step: usize,
        records: Vec<usize>,
        times: Vec<f64>,
    },

    #[error("environment too dense: no valid task after {0} rejections")]
    EnvironmentTooDense(usize),

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
