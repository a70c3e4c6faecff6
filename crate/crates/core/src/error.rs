use thiserror::Error;

use crate::ClientId;

pub type Result<T, E = FedError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FedError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("class {class} has {available} examples, {requested} requested")]
    InsufficientClass {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("{requested} examples requested across clients but only {available} available")]
    InsufficientData { requested: usize, available: usize },

    #[error("exhaustive subset search is capped at {limit} models, got {actual}")]
    SubsetBoundExceeded { limit: usize, actual: usize },

    #[error("client {0} is not among the candidate models")]
    UnknownClient(ClientId),

    #[error("reward set is not a subset of the previously sampled clients (client {0})")]
    RewardNotSampled(ClientId),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for FedError {
    fn from(e: std::io::Error) -> Self {
        FedError::Io(e.to_string())
    }
}

impl From<csv::Error> for FedError {
    fn from(e: csv::Error) -> Self {
        FedError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for FedError {
    fn from(e: serde_json::Error) -> Self {
        FedError::Io(e.to_string())
    }
}
