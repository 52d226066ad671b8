use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bodies {receiver} and {sender} are {distance} apart, below the minimum {min_r}")]
    Singularity {
        receiver: usize,
        sender: usize,
        distance: f64,
        min_r: f64,
    },

    #[error("string nodes {0} and {1} are not adjacent")]
    Topology(usize, usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for {len} nodes")]
    Index { index: usize, len: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("unbound variable {0}")]
    UnboundVariable(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
