//! Deterministic single-process federated-learning simulator.
//!
//! Global aggregation is split into a client sampler and a model-averaging
//! step. Alongside the FedAvg, FedProx and FedPdp baselines, the averaging
//! step can filter the sampled models down to the subset whose logit
//! ensemble scores best on a server-side validation set, and the sampler can
//! be a UCB or Thompson-sampling bandit rewarded by membership in that
//! subset.
//!
//! Every run is a pure function of its [`orchestrator::FederationConfig`]:
//! random decisions come from [`rng::RngStream`]s derived from the master
//! seed, so results do not depend on the worker-thread count.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod aggregation;
pub mod data;
pub mod dist;
pub mod error;
pub mod linalg;
pub mod model;
pub mod orchestrator;
pub mod report;
pub mod rng;
pub mod sampling;

pub use error::{FedError, Result};

/// Index of a client in `0..num_clients`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub usize);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
