use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid config at `{key}`: {message}")]
    InvalidConfig { key: String, message: String },

    #[error("degenerate graph: {0}")]
    DegenerateGraph(String),

    #[error("degenerate node: {0}")]
    DegenerateNode(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("non-finite value at node {node}: {detail}")]
    NonFinite { node: String, detail: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("reproducibility check failed: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            message: message.into(),
        }
    }
}
