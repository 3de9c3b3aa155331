use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point set is empty")]
    EmptyPointSet,

    #[error("invalid discretization: {0}")]
    InvalidDiscretization(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("failed to spawn a valid instance after {attempts} attempts")]
    SpawnFailed { attempts: usize },

    #[error("expected {expected} actions, got {got}")]
    ActionCountMismatch { expected: usize, got: usize },

    #[error("message length {got} does not match communication size {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("{agents} agents cannot be matched to {targets} targets")]
    SizeMismatch { agents: usize, targets: usize },

    #[error("input of length {got} does not match network input {expected}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("training diverged at update {update}: loss = {loss}")]
    Diverged { update: usize, loss: f64 },

    #[error("checkpoint not found: {}", .0.display())]
    CheckpointNotFound(PathBuf),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("unknown policy spec `{0}`")]
    UnknownPolicy(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}
