//! Synthetic datasets, Dirichlet partitioners and validation-set extraction.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dist::{categorical, dirichlet_symmetric};
use crate::error::{FedError, Result};
use crate::linalg::Matrix;
use crate::rng::RngStream;
use crate::ClientId;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(FedError::DimensionMismatch {
                context: "dataset labels",
                expected: features.rows(),
                actual: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(FedError::LabelOutOfRange { label, num_classes });
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows and labels at `indices`.
    pub fn subset(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        (
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Per-class counts over `indices`.
    pub fn class_counts(&self, indices: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &i in indices {
            counts[self.labels[i]] += 1;
        }
        counts
    }

    fn indices_by_class(&self, pool: &[usize]) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for &i in pool {
            by_class[self.labels[i]].push(i);
        }
        by_class
    }
}

/// Unit direction of class `c`'s blob center.
///
/// Basis vectors when there are at least as many dimensions as classes,
/// otherwise evenly spaced points on the circle spanned by the first two axes.
fn class_direction(c: usize, num_classes: usize, dim: usize) -> Vec<f64> {
    let mut u = vec![0.0; dim];
    if dim >= num_classes {
        u[c] = 1.0;
    } else if dim == 1 {
        u[0] = if c.is_multiple_of(2) { 1.0 } else { -1.0 };
    } else {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / num_classes as f64;
        u[0] = angle.cos();
        u[1] = angle.sin();
    }
    u
}

/// Gaussian blobs with unit covariance, `per_class` examples per class,
/// ordered by class.
pub fn synth_dataset(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    rng: &mut RngStream,
) -> Result<Dataset> {
    if dim < 1 {
        return Err(FedError::InvalidParameter {
            name: "dim",
            reason: "must be at least 1".into(),
        });
    }
    if num_classes == 0 || per_class == 0 {
        return Err(FedError::InvalidParameter {
            name: "num_classes/per_class",
            reason: "must be positive".into(),
        });
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(FedError::InvalidParameter {
            name: "separation",
            reason: "must be positive and finite".into(),
        });
    }
    let n = num_classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..num_classes {
        let center: Vec<f64> = class_direction(c, num_classes, dim)
            .into_iter()
            .map(|v| v * separation)
            .collect();
        for _ in 0..per_class {
            for &m in &center {
                let z: f64 = StandardNormal.sample(rng);
                data.push(m + z);
            }
            labels.push(c);
        }
    }
    Dataset::new(Matrix::from_vec(n, dim, data)?, labels, num_classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionScheme {
    ClientHeterogeneity,
    ClassHeterogeneity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub alpha: f64,
    pub num_clients: usize,
    /// Used only by class heterogeneity.
    pub examples_per_client: usize,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(FedError::InvalidParameter {
                name: "alpha",
                reason: format!("must be positive and finite, got {}", self.alpha),
            });
        }
        if self.num_clients == 0 {
            return Err(FedError::InvalidParameter {
                name: "num_clients",
                reason: "must be positive".into(),
            });
        }
        if self.scheme == PartitionScheme::ClassHeterogeneity && self.examples_per_client == 0 {
            return Err(FedError::InvalidParameter {
                name: "examples_per_client",
                reason: "must be positive for class heterogeneity".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientShard {
    pub client_id: ClientId,
    pub indices: Vec<usize>,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub shards: Vec<ClientShard>,
    /// Clients that received no data at all.
    pub empty_clients: Vec<ClientId>,
}

impl Partition {
    fn from_assignments(assignments: Vec<Vec<usize>>) -> Self {
        let shards: Vec<ClientShard> = assignments
            .into_iter()
            .enumerate()
            .map(|(k, indices)| ClientShard {
                client_id: ClientId(k),
                indices,
            })
            .collect();
        let empty_clients = shards
            .iter()
            .filter(|s| s.is_empty())
            .map(|s| s.client_id)
            .collect();
        Self {
            shards,
            empty_clients,
        }
    }
}

/// Integer counts summing to `total` by largest-remainder rounding of `p · total`.
/// Remainder ties go to the smaller index.
pub fn largest_remainder_counts(p: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = p.iter().map(|&v| v * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|&v| v.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    if assigned > total {
        // Floating error can only push the floor sum over by a hair; trim from the back.
        let mut excess = assigned - total;
        for c in counts.iter_mut().rev() {
            let take = excess.min(*c);
            *c -= take;
            excess -= take;
        }
        return counts;
    }
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().cycle().take(total - assigned) {
        counts[k] += 1;
    }
    counts
}

/// Per-class Dirichlet split across clients: shard sizes vary.
pub fn partition_client_heterogeneity(
    ds: &Dataset,
    pool: &[usize],
    spec: &PartitionSpec,
    rng: &mut RngStream,
) -> Result<Partition> {
    spec.validate()?;
    if spec.scheme != PartitionScheme::ClientHeterogeneity {
        return Err(FedError::InvalidParameter {
            name: "scheme",
            reason: "expected ClientHeterogeneity".into(),
        });
    }
    let k = spec.num_clients;
    let mut assignments = vec![Vec::new(); k];
    for class_indices in ds.indices_by_class(pool) {
        let p = dirichlet_symmetric(spec.alpha, k, rng)?;
        let counts = largest_remainder_counts(&p, class_indices.len());
        let mut start = 0;
        for (client, &count) in counts.iter().enumerate() {
            assignments[client].extend_from_slice(&class_indices[start..start + count]);
            start += count;
        }
    }
    Ok(Partition::from_assignments(assignments))
}

/// Per-client Dirichlet label mix with equal shard sizes.
pub fn partition_class_heterogeneity(
    ds: &Dataset,
    pool: &[usize],
    spec: &PartitionSpec,
    rng: &mut RngStream,
) -> Result<Partition> {
    spec.validate()?;
    if spec.scheme != PartitionScheme::ClassHeterogeneity {
        return Err(FedError::InvalidParameter {
            name: "scheme",
            reason: "expected ClassHeterogeneity".into(),
        });
    }
    let requested = spec.num_clients * spec.examples_per_client;
    if requested > pool.len() {
        return Err(FedError::InsufficientData {
            requested,
            available: pool.len(),
        });
    }

    let mut remaining = ds.indices_by_class(pool);
    for class_pool in remaining.iter_mut() {
        class_pool.shuffle(rng);
        // Pop from the back, so reverse to hand out in shuffled order.
        class_pool.reverse();
    }

    let n_classes = ds.num_classes;
    let mut assignments = Vec::with_capacity(spec.num_clients);
    for _ in 0..spec.num_clients {
        let q = dirichlet_symmetric(spec.alpha, n_classes, rng)?;
        let mut mine = Vec::with_capacity(spec.examples_per_client);
        for _ in 0..spec.examples_per_client {
            let weights: Vec<f64> = q
                .iter()
                .zip(&remaining)
                .map(|(&w, pool)| if pool.is_empty() { 0.0 } else { w })
                .collect();
            let class = match categorical(&weights, rng) {
                Some(c) => c,
                None => {
                    // q has no mass left on any non-exhausted class.
                    let open: Vec<f64> = remaining
                        .iter()
                        .map(|p| if p.is_empty() { 0.0 } else { 1.0 })
                        .collect();
                    categorical(&open, rng).ok_or(FedError::InsufficientData {
                        requested,
                        available: pool.len(),
                    })?
                }
            };
            mine.push(remaining[class].pop().expect("class pool checked non-empty"));
        }
        assignments.push(mine);
    }
    Ok(Partition::from_assignments(assignments))
}

pub fn partition(
    ds: &Dataset,
    pool: &[usize],
    spec: &PartitionSpec,
    rng: &mut RngStream,
) -> Result<Partition> {
    match spec.scheme {
        PartitionScheme::ClientHeterogeneity => partition_client_heterogeneity(ds, pool, spec, rng),
        PartitionScheme::ClassHeterogeneity => partition_class_heterogeneity(ds, pool, spec, rng),
    }
}

/// Balanced validation split: `per_class` indices of every class, drawn
/// without replacement. Returns `(validation, train)`, both sorted.
pub fn build_validation_set(
    ds: &Dataset,
    per_class: usize,
    rng: &mut RngStream,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let all: Vec<usize> = (0..ds.len()).collect();
    let by_class = ds.indices_by_class(&all);
    let mut in_val = vec![false; ds.len()];
    let mut val = Vec::with_capacity(per_class * ds.num_classes);
    for (class, mut indices) in by_class.into_iter().enumerate() {
        if indices.len() < per_class {
            return Err(FedError::InsufficientClass {
                class,
                available: indices.len(),
                requested: per_class,
            });
        }
        let (chosen, _) = indices.partial_shuffle(rng, per_class);
        let mut chosen = chosen.to_vec();
        chosen.sort_unstable();
        for &i in &chosen {
            in_val[i] = true;
        }
        val.extend(chosen);
    }
    val.sort_unstable();
    let train = (0..ds.len()).filter(|&i| !in_val[i]).collect();
    Ok((val, train))
}

/// Total-variation distance between two distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn normalize(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Mean TV distance between each non-empty shard's class distribution and
/// the class distribution of the pool it was carved from.
pub fn mean_label_skew(ds: &Dataset, pool: &[usize], partition: &Partition) -> f64 {
    let global = normalize(&ds.class_counts(pool));
    let skews: Vec<f64> = partition
        .shards
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| total_variation(&normalize(&ds.class_counts(&s.indices)), &global))
        .collect();
    skews.iter().sum::<f64>() / skews.len().max(1) as f64
}

/// Reproducibility record of a partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub spec: PartitionSpec,
    pub seed: u64,
    pub empty_clients: Vec<ClientId>,
    pub clients: BTreeMap<ClientId, Vec<usize>>,
}

impl PartitionManifest {
    pub fn new(spec: PartitionSpec, seed: u64, partition: &Partition) -> Self {
        Self {
            spec,
            seed,
            empty_clients: partition.empty_clients.clone(),
            clients: partition
                .shards
                .iter()
                .map(|s| (s.client_id, s.indices.clone()))
                .collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
