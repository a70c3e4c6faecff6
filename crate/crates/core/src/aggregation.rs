//! Validation scores, the combinatorial model filter and the model-averaging
//! schemes (FedAvg, mean, FedPdp, combinatorial averaging).

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::linalg::{argmax, log_sum_exp, Matrix};
use crate::model::{forward_logits, Batch, ModelSpec, ParamVector};
use crate::ClientId;

/// Largest candidate set the filter will enumerate exhaustively.
pub const MAX_FILTER_CANDIDATES: usize = 20;

/// Aggregation weights `p_k` over all clients, indexed by client id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientWeightMap {
    p: Vec<f64>,
}

impl ClientWeightMap {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(FedError::Empty("client weights"));
        }
        if p.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(FedError::InvalidParameter {
                name: "client weights",
                reason: "every weight must be finite and non-negative".into(),
            });
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(FedError::InvalidParameter {
                name: "client weights",
                reason: format!("must sum to 1, got {total}"),
            });
        }
        Ok(Self { p })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(FedError::Empty("client weights"));
        }
        Ok(Self {
            p: vec![1.0 / n as f64; n],
        })
    }

    /// Weights proportional to `sizes`.
    pub fn proportional(sizes: &[usize]) -> Result<Self> {
        let total: usize = sizes.iter().sum();
        if total == 0 {
            return Err(FedError::Empty("client data"));
        }
        Self::new(sizes.iter().map(|&s| s as f64 / total as f64).collect())
    }

    pub fn get(&self, k: ClientId) -> f64 {
        self.p[k.0]
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    fn check_client(&self, k: ClientId) -> Result<()> {
        if k.0 < self.p.len() {
            Ok(())
        } else {
            Err(FedError::UnknownClient(k))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScoreFunction {
    /// Ensemble top-1 accuracy.
    DiracDelta,
    /// Mean log-probability of the true class (negated cross-entropy).
    ClassificationLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    /// Sorted ascending; never empty.
    pub optimal_subset: Vec<ClientId>,
    pub score: f64,
    /// Score of the unfiltered candidate set.
    pub full_set_score: f64,
    pub subsets_evaluated: u64,
}

fn canonical_subset(subset: &[ClientId]) -> Result<Vec<ClientId>> {
    let set: BTreeSet<ClientId> = subset.iter().copied().collect();
    if set.is_empty() {
        return Err(FedError::Empty("subset"));
    }
    Ok(set.into_iter().collect())
}

/// Elementwise mean of equally shaped matrices, summed in slice order.
fn mean_of(mats: &[&Matrix]) -> Matrix {
    let mut out = mats[0].clone();
    for m in &mats[1..] {
        for (o, &v) in out.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *o += v;
        }
    }
    let n = mats.len() as f64;
    out.as_mut_slice().iter_mut().for_each(|v| *v /= n);
    out
}

/// Unweighted mean of the logits of every model in `subset`.
pub fn ensemble_logits(
    models: &BTreeMap<ClientId, ParamVector>,
    subset: &[ClientId],
    spec: &ModelSpec,
    features: &Matrix,
) -> Result<Matrix> {
    let subset = canonical_subset(subset)?;
    let logits = subset
        .iter()
        .map(|k| {
            let w = models.get(k).ok_or(FedError::UnknownClient(*k))?;
            forward_logits(w, spec, features)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Matrix> = logits.iter().collect();
    Ok(mean_of(&refs))
}

/// Score of already-averaged logits against `labels`. Higher is better.
pub fn score_logits(logits: &Matrix, labels: &[usize], kind: ScoreFunction) -> f64 {
    let n = labels.len() as f64;
    match kind {
        ScoreFunction::DiracDelta => {
            let hits = labels
                .iter()
                .enumerate()
                .filter(|&(i, &y)| argmax(logits.row(i)) == y)
                .count();
            hits as f64 / n
        }
        ScoreFunction::ClassificationLoss => {
            let total: f64 = labels
                .iter()
                .enumerate()
                .map(|(i, &y)| {
                    let z = logits.row(i);
                    z[y] - log_sum_exp(z)
                })
                .sum();
            total / n
        }
    }
}

/// Validation score of the ensemble over `subset`.
pub fn score(
    val: Batch<'_>,
    models: &BTreeMap<ClientId, ParamVector>,
    subset: &[ClientId],
    spec: &ModelSpec,
    kind: ScoreFunction,
) -> Result<f64> {
    if val.labels.is_empty() {
        return Err(FedError::Empty("validation set"));
    }
    let logits = ensemble_logits(models, subset, spec, val.features)?;
    Ok(score_logits(&logits, val.labels, kind))
}

/// True when `(score_a, a)` beats `(score_b, b)`: higher score, then more
/// members, then the lexicographically smaller id tuple.
fn beats(score_a: f64, a: &[ClientId], score_b: f64, b: &[ClientId]) -> bool {
    match score_a.total_cmp(&score_b) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => match a.len().cmp(&b.len()) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => a < b,
        },
    }
}

fn members(candidates: &[ClientId], mask: u32) -> Vec<ClientId> {
    candidates
        .iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, &k)| k)
        .collect()
}

/// Exhaustive search over every non-empty subset of the candidate models for
/// the ensemble with the best validation score.
pub fn combinatorial_filter(
    models: &BTreeMap<ClientId, ParamVector>,
    val: Batch<'_>,
    spec: &ModelSpec,
    kind: ScoreFunction,
) -> Result<FilterResult> {
    let candidates: Vec<ClientId> = models.keys().copied().collect();
    let n = candidates.len();
    if n == 0 {
        return Err(FedError::Empty("filter candidates"));
    }
    if n > MAX_FILTER_CANDIDATES {
        return Err(FedError::SubsetBoundExceeded {
            limit: MAX_FILTER_CANDIDATES,
            actual: n,
        });
    }
    if val.labels.is_empty() {
        return Err(FedError::Empty("validation set"));
    }

    let logits = candidates
        .par_iter()
        .map(|k| forward_logits(&models[k], spec, val.features))
        .collect::<Result<Vec<_>>>()?;

    let total = (1u32 << n) - 1;
    // Scores land in a mask-indexed table so the reduction below sees them in
    // canonical order no matter which worker finished first.
    let scores: Vec<f64> = (1..=total)
        .into_par_iter()
        .map(|mask| {
            let picked: Vec<&Matrix> = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| &logits[i])
                .collect();
            score_logits(&mean_of(&picked), val.labels, kind)
        })
        .collect();

    let mut best_mask = 1u32;
    let mut best_members = members(&candidates, 1);
    for mask in 2..=total {
        let s = scores[(mask - 1) as usize];
        let m = members(&candidates, mask);
        if beats(s, &m, scores[(best_mask - 1) as usize], &best_members) {
            best_mask = mask;
            best_members = m;
        }
    }

    Ok(FilterResult {
        optimal_subset: best_members,
        score: scores[(best_mask - 1) as usize],
        full_set_score: scores[(total - 1) as usize],
        subsets_evaluated: u64::from(total),
    })
}

fn check_lengths<'a>(reference: usize, models: impl IntoIterator<Item = &'a ParamVector>) -> Result<()> {
    for w in models {
        if w.len() != reference {
            return Err(FedError::DimensionMismatch {
                context: "model parameters",
                expected: reference,
                actual: w.len(),
            });
        }
    }
    Ok(())
}

fn axpy(out: &mut [f64], coef: f64, w: &ParamVector) {
    for (o, &v) in out.iter_mut().zip(w.as_slice()) {
        *o += coef * v;
    }
}

/// `Σ_{k∉S} p_k w_global + Σ_{k∈S} p_k w_k`.
pub fn average_fedavg(
    w_global: &ParamVector,
    local: &BTreeMap<ClientId, ParamVector>,
    p: &ClientWeightMap,
) -> Result<ParamVector> {
    if local.is_empty() {
        return Ok(w_global.clone());
    }
    check_lengths(w_global.len(), local.values())?;
    for &k in local.keys() {
        p.check_client(k)?;
    }
    let unsampled_mass: f64 = (0..p.len())
        .map(ClientId)
        .filter(|k| !local.contains_key(k))
        .map(|k| p.get(k))
        .sum();
    let mut out = vec![0.0; w_global.len()];
    axpy(&mut out, unsampled_mass, w_global);
    for (&k, w) in local {
        axpy(&mut out, p.get(k), w);
    }
    Ok(ParamVector::new(out))
}

/// Unweighted mean; repeated entries count with multiplicity.
pub fn average_mean<'a>(models: impl IntoIterator<Item = &'a ParamVector>) -> Result<ParamVector> {
    let models: Vec<&ParamVector> = models.into_iter().collect();
    let first = models.first().ok_or(FedError::Empty("models to average"))?;
    check_lengths(first.len(), models.iter().copied())?;
    let mut out = vec![0.0; first.len()];
    for w in &models {
        axpy(&mut out, 1.0, w);
    }
    let n = models.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(ParamVector::new(out))
}

/// `Σ_{k∈S} p_k · (|S_all| / |S|) · w_k`.
pub fn average_pdp(
    local: &BTreeMap<ClientId, ParamVector>,
    p: &ClientWeightMap,
    total_clients: usize,
) -> Result<ParamVector> {
    let first = local.values().next().ok_or(FedError::Empty("models to average"))?;
    check_lengths(first.len(), local.values())?;
    let scale = total_clients as f64 / local.len() as f64;
    let mut out = vec![0.0; first.len()];
    for (&k, w) in local {
        p.check_client(k)?;
        axpy(&mut out, p.get(k) * scale, w);
    }
    Ok(ParamVector::new(out))
}

/// FedPdp averaging restricted to the filter's subset.
pub fn average_ca(
    local: &BTreeMap<ClientId, ParamVector>,
    filter: &FilterResult,
    p: &ClientWeightMap,
    total_clients: usize,
) -> Result<ParamVector> {
    let kept = filter
        .optimal_subset
        .iter()
        .map(|k| {
            local
                .get(k)
                .map(|w| (*k, w.clone()))
                .ok_or(FedError::UnknownClient(*k))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    average_pdp(&kept, p, total_clients)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use rand::Rng;

    fn ids(v: &[usize]) -> Vec<ClientId> {
        v.iter().map(|&i| ClientId(i)).collect()
    }

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec())
    }

    #[test]
    fn weight_map_checks() {
        assert!(ClientWeightMap::new(vec![0.5, 0.6]).is_err());
        assert!(ClientWeightMap::new(vec![-0.5, 1.5]).is_err());
        let p = ClientWeightMap::proportional(&[10, 30]).unwrap();
        assert_eq!(p.as_slice(), &[0.25, 0.75]);
        assert!(ClientWeightMap::proportional(&[0, 0]).is_err());
    }

    #[test]
    fn ensemble_singleton_and_duplicates() {
        let spec = ModelSpec::logistic(2, 3);
        let mut rng = RngStream::new(1);
        let w = ParamVector::random_uniform(&spec, 1.0, &mut rng);
        let x = Matrix::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.5]]).unwrap();
        let models: BTreeMap<_, _> = [(ClientId(0), w.clone()), (ClientId(4), w.clone())].into();
        let direct = forward_logits(&w, &spec, &x).unwrap();
        assert_eq!(ensemble_logits(&models, &ids(&[4]), &spec, &x).unwrap(), direct);
        let both = ensemble_logits(&models, &ids(&[0, 4]), &spec, &x).unwrap();
        for (a, b) in both.as_slice().iter().zip(direct.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(ensemble_logits(&models, &[], &spec, &x).is_err());
    }

    #[test]
    fn ensemble_matches_summation_loop() {
        let spec = ModelSpec::mlp(3, 4, 2);
        let mut rng = RngStream::new(2);
        let models: BTreeMap<_, _> = (0..3)
            .map(|k| (ClientId(k), ParamVector::random_uniform(&spec, 1.0, &mut rng)))
            .collect();
        let x = Matrix::from_vec(4, 3, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let got = ensemble_logits(&models, &ids(&[0, 1, 2]), &spec, &x).unwrap();
        let per: Vec<Matrix> = models.values().map(|w| forward_logits(w, &spec, &x).unwrap()).collect();
        for i in 0..4 {
            for j in 0..2 {
                let expect = (per[0].get(i, j) + per[1].get(i, j) + per[2].get(i, j)) / 3.0;
                assert!((got.get(i, j) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn scores_on_known_logits() {
        let perfect = Matrix::from_rows(&[vec![5.0, 0.0], vec![0.0, 5.0]]).unwrap();
        assert_eq!(score_logits(&perfect, &[0, 1], ScoreFunction::DiracDelta), 1.0);
        let flat = Matrix::zeros(3, 4);
        let s = score_logits(&flat, &[0, 1, 3], ScoreFunction::ClassificationLoss);
        assert!((s + 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn filter_singleton() {
        let spec = ModelSpec::logistic(2, 2);
        let models: BTreeMap<_, _> = [(ClientId(3), ParamVector::zeros(6))].into();
        let x = Matrix::zeros(2, 2);
        let r = combinatorial_filter(&models, Batch { features: &x, labels: &[0, 1] }, &spec, ScoreFunction::DiracDelta)
            .unwrap();
        assert_eq!(r.optimal_subset, ids(&[3]));
        assert_eq!(r.subsets_evaluated, 1);
    }

    #[test]
    fn filter_drops_adversary() {
        // Class 0 at x = -1, class 1 at x = +1; the good model has logits (-x, x).
        let spec = ModelSpec::logistic(1, 2);
        let good = pv(&[-1.0, 1.0, 0.0, 0.0]);
        let bad = pv(&[1.0, -1.0, 0.0, 0.0]);
        let models: BTreeMap<_, _> = [(ClientId(0), good), (ClientId(1), bad)].into();
        let x = Matrix::from_rows(&[vec![-1.0], vec![-2.0], vec![1.0], vec![2.0]]).unwrap();
        let val = Batch { features: &x, labels: &[0, 0, 1, 1] };
        let r = combinatorial_filter(&models, val, &spec, ScoreFunction::DiracDelta).unwrap();
        assert_eq!(r.optimal_subset, ids(&[0]));
        assert_eq!(r.score, 1.0);
        assert_eq!(r.subsets_evaluated, 3);
    }

    #[test]
    fn filter_bound() {
        let spec = ModelSpec::logistic(1, 2);
        let models: BTreeMap<_, _> = (0..21).map(|k| (ClientId(k), ParamVector::zeros(4))).collect();
        let x = Matrix::zeros(1, 1);
        let err = combinatorial_filter(&models, Batch { features: &x, labels: &[0] }, &spec, ScoreFunction::DiracDelta)
            .unwrap_err();
        assert_eq!(err, FedError::SubsetBoundExceeded { limit: 20, actual: 21 });
    }

    #[test]
    fn filter_ties_prefer_more_members() {
        // Identical models tie everywhere; the full set wins.
        let spec = ModelSpec::logistic(1, 2);
        let models: BTreeMap<_, _> = (0..4).map(|k| (ClientId(k), pv(&[0.0, 0.0, 1.0, 0.0]))).collect();
        let x = Matrix::zeros(2, 1);
        let r = combinatorial_filter(&models, Batch { features: &x, labels: &[0, 1] }, &spec, ScoreFunction::DiracDelta)
            .unwrap();
        assert_eq!(r.optimal_subset, ids(&[0, 1, 2, 3]));
        assert_eq!(r.subsets_evaluated, 15);
    }

    #[test]
    fn fedavg_by_hand() {
        let p = ClientWeightMap::new(vec![0.5, 0.3, 0.2]).unwrap();
        let g = pv(&[1.0, 2.0]);
        let local: BTreeMap<_, _> = [(ClientId(0), pv(&[3.0, -1.0])), (ClientId(2), pv(&[0.0, 10.0]))].into();
        let out = average_fedavg(&g, &local, &p).unwrap();
        let expect = [0.3 * 1.0 + 0.5 * 3.0 + 0.2 * 0.0, 0.3 * 2.0 - 0.5 * 1.0 + 0.2 * 10.0];
        for (a, b) in out.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(average_fedavg(&g, &BTreeMap::new(), &p).unwrap(), g);
    }

    #[test]
    fn mean_cases() {
        let w = pv(&[1.0, -2.0]);
        let neg = pv(&[-1.0, 2.0]);
        assert_eq!(average_mean([&w]).unwrap(), w);
        assert_eq!(average_mean([&w, &neg]).unwrap(), pv(&[0.0, 0.0]));
        assert!(average_mean(std::iter::empty()).is_err());
    }

    #[test]
    fn pdp_nonuniform_by_hand() {
        let p = ClientWeightMap::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let local: BTreeMap<_, _> = [(ClientId(1), pv(&[1.0])), (ClientId(3), pv(&[2.0]))].into();
        let out = average_pdp(&local, &p, 4).unwrap();
        assert!((out.as_slice()[0] - (0.2 * 2.0 * 1.0 + 0.4 * 2.0 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn ca_nonuniform_by_hand() {
        let p = ClientWeightMap::new(vec![0.05, 0.1, 0.15, 0.2, 0.5]).unwrap();
        let local: BTreeMap<_, _> = (0..5).map(|k| (ClientId(k), pv(&[k as f64 + 1.0, -(k as f64)]))).collect();
        let filter = FilterResult {
            optimal_subset: ids(&[0, 2, 4]),
            score: 0.0,
            full_set_score: 0.0,
            subsets_evaluated: 31,
        };
        let out = average_ca(&local, &filter, &p, 5).unwrap();
        let f = 5.0 / 3.0;
        let e0 = f * (0.05 * 1.0 + 0.15 * 3.0 + 0.5 * 5.0);
        let e1 = f * (0.05 * 0.0 + 0.15 * -2.0 + 0.5 * -4.0);
        assert!((out.as_slice()[0] - e0).abs() < 1e-12);
        assert!((out.as_slice()[1] - e1).abs() < 1e-12);

        let missing = FilterResult {
            optimal_subset: ids(&[7]),
            ..filter
        };
        assert_eq!(average_ca(&local, &missing, &p, 5).unwrap_err(), FedError::UnknownClient(ClientId(7)));
    }
}
