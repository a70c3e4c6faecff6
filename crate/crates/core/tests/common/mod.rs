//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeMap;

use fedcm_core::aggregation::{score, ScoreFunction};
use fedcm_core::data::{PartitionScheme, PartitionSpec};
use fedcm_core::linalg::Matrix;
use fedcm_core::model::{loss_and_grad, Batch, LocalHyper, ModelSpec, ParamVector, Prox};
use fedcm_core::orchestrator::{Algorithm, DataSpec, FederationConfig, WeightMode};
use fedcm_core::rng::RngStream;
use fedcm_core::ClientId;
use rand::Rng;

pub fn random_matrix(rng: &mut RngStream, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

pub fn random_labels(rng: &mut RngStream, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..classes)).collect()
}

pub fn random_params(rng: &mut RngStream, len: usize, scale: f64) -> ParamVector {
    ParamVector::new((0..len).map(|_| rng.gen_range(-scale..scale)).collect())
}

/// Loss only, through the public API.
pub fn loss_at(w: &ParamVector, spec: &ModelSpec, batch: Batch<'_>, prox: Option<Prox<'_>>) -> f64 {
    loss_and_grad(w, spec, batch, prox).unwrap().0
}

/// Central finite-difference gradient with step `h`.
pub fn numeric_grad(w: &ParamVector, spec: &ModelSpec, batch: Batch<'_>, prox: Option<Prox<'_>>, h: f64) -> Vec<f64> {
    (0..w.len())
        .map(|i| {
            let mut plus = w.clone().into_inner();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let lp = loss_at(&ParamVector::new(plus), spec, batch, prox);
            let lm = loss_at(&ParamVector::new(minus), spec, batch, prox);
            (lp - lm) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let denom = norm(a).max(norm(b));
    if denom == 0.0 {
        0.0
    } else {
        norm(&diff) / denom
    }
}

/// Recursively enumerates every non-empty subset of `ids` (already sorted).
fn subsets(ids: &[ClientId]) -> Vec<Vec<ClientId>> {
    match ids.split_first() {
        None => vec![vec![]],
        Some((&head, rest)) => {
            let tail = subsets(rest);
            let mut out = Vec::with_capacity(tail.len() * 2);
            for s in &tail {
                let mut with = vec![head];
                with.extend(s);
                out.push(with);
                out.push(s.clone());
            }
            out
        }
    }
}

/// Brute-force argmax of the validation score. Ties: more members, then the
/// lexicographically smaller sorted id tuple.
pub fn brute_force_filter(
    models: &BTreeMap<ClientId, ParamVector>,
    val: Batch<'_>,
    spec: &ModelSpec,
    kind: ScoreFunction,
) -> (Vec<ClientId>, f64) {
    let ids: Vec<ClientId> = models.keys().copied().collect();
    let mut best: Option<(Vec<ClientId>, f64)> = None;
    for s in subsets(&ids).into_iter().filter(|s| !s.is_empty()) {
        let value = score(val, models, &s, spec, kind).unwrap();
        let better = match &best {
            None => true,
            Some((b, bv)) => {
                value > *bv || (value == *bv && (s.len() > b.len() || (s.len() == b.len() && s < *b)))
            }
        };
        if better {
            best = Some((s, value));
        }
    }
    best.unwrap()
}

/// Benchmark setup: 10-class blobs, 20
/// clients under class heterogeneity (α = 0.1), logistic regression,
/// 50 rounds with 8 clients per round and 50 validation examples per class.
pub fn benchmark_config(algorithm: Algorithm, seed: u64) -> FederationConfig {
    FederationConfig {
        num_clients: 20,
        sampling_ratio: 0.4,
        rounds: 50,
        algorithm,
        score_fn: ScoreFunction::ClassificationLoss,
        local: LocalHyper {
            eta: 0.01,
            momentum: 0.0,
            weight_decay: 0.0,
            prox_mu: if algorithm == Algorithm::FedProx { 0.1 } else { 0.0 },
            batch_size: 10,
            local_epochs: 1,
        },
        partition: PartitionSpec {
            scheme: PartitionScheme::ClassHeterogeneity,
            alpha: 0.1,
            num_clients: 20,
            examples_per_client: 200,
        },
        model: ModelSpec::logistic(20, 10),
        data: DataSpec {
            num_classes: 10,
            dim: 20,
            train_per_class: 500,
            test_per_class: 200,
            separation: 3.0,
        },
        val_per_class: 50,
        seed,
        client_weights: WeightMode::DataProportional,
    }
}

/// A small, fast configuration for behavioural tests.
pub fn small_config(algorithm: Algorithm, seed: u64) -> FederationConfig {
    let mut cfg = benchmark_config(algorithm, seed);
    cfg.num_clients = 8;
    cfg.partition.num_clients = 8;
    cfg.partition.examples_per_client = 30;
    cfg.rounds = 6;
    cfg.data = DataSpec {
        num_classes: 4,
        dim: 5,
        train_per_class: 80,
        test_per_class: 30,
        separation: 2.5,
    };
    cfg.model = ModelSpec::logistic(5, 4);
    cfg.val_per_class = 10;
    cfg.local.eta = 0.05;
    cfg
}
