use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("impossible evidence: {0}")]
    ImpossibleEvidence(String),
    #[error("enumeration guard exceeded: {nodes} nodes > limit {limit}")]
    GuardExceeded { nodes: usize, limit: usize },
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
