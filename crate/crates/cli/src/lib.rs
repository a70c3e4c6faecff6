//! Batch experiment runner for the `fedcm-core` simulator.

pub mod config;
pub mod suite;

pub use config::{parse_config, parse_str, to_toml, ExperimentSuite};
pub use suite::{run_suite, SuiteOptions, SuiteSummary};

use fedcm_core::FedError;

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error("{0}")]
    Io(String),
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Core(#[from] FedError),
}
