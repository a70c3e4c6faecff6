//! The federated training loop: sample, train locally, filter, average.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{
    average_ca, average_fedavg, average_mean, average_pdp, combinatorial_filter, score, ClientWeightMap,
    FilterResult, ScoreFunction, MAX_FILTER_CANDIDATES,
};
use crate::data::{build_validation_set, partition, synth_dataset, Dataset, Partition, PartitionScheme, PartitionSpec};
use crate::error::{FedError, Result};
use crate::linalg::{argmax, Matrix};
use crate::model::{forward_logits, local_update, Batch, LocalHyper, ModelSpec, ParamVector};
use crate::rng::{label, RngStream};
use crate::sampling::{
    sample_uniform, sample_weighted_replacement, ts_update_and_select, ucb_init, ucb_update_and_select, Feedback,
    SamplerState, TsState,
};
use crate::ClientId;

/// Half-width of the uniform initialization of `w^0`.
pub const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    FedAvg,
    FedProx,
    FedPdp,
    #[serde(rename = "FedCA")]
    FedCa,
    #[serde(rename = "FedCM-UCB")]
    FedCmUcb,
    #[serde(rename = "FedCM-TS")]
    FedCmTs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    Uniform,
    WeightedWithReplacement,
    BanditUcb,
    BanditTs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AveragingScheme {
    /// Unsampled weight stays on the previous global model.
    FedAvg,
    Mean,
    Pdp,
    Combinatorial,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::FedAvg,
        Algorithm::FedProx,
        Algorithm::FedPdp,
        Algorithm::FedCa,
        Algorithm::FedCmUcb,
        Algorithm::FedCmTs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAvg => "FedAvg",
            Algorithm::FedProx => "FedProx",
            Algorithm::FedPdp => "FedPdp",
            Algorithm::FedCa => "FedCA",
            Algorithm::FedCmUcb => "FedCM-UCB",
            Algorithm::FedCmTs => "FedCM-TS",
        }
    }

    pub fn sampling(self) -> SamplingScheme {
        match self {
            Algorithm::FedAvg | Algorithm::FedPdp | Algorithm::FedCa => SamplingScheme::Uniform,
            Algorithm::FedProx => SamplingScheme::WeightedWithReplacement,
            Algorithm::FedCmUcb => SamplingScheme::BanditUcb,
            Algorithm::FedCmTs => SamplingScheme::BanditTs,
        }
    }

    pub fn averaging(self) -> AveragingScheme {
        match self {
            Algorithm::FedAvg => AveragingScheme::FedAvg,
            Algorithm::FedProx => AveragingScheme::Mean,
            Algorithm::FedPdp => AveragingScheme::Pdp,
            Algorithm::FedCa | Algorithm::FedCmUcb | Algorithm::FedCmTs => AveragingScheme::Combinatorial,
        }
    }

    pub fn filters(self) -> bool {
        self.averaging() == AveragingScheme::Combinatorial
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_'))
            .flat_map(char::to_lowercase)
            .collect();
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().replace('-', "").to_lowercase() == key)
            .ok_or_else(|| {
                format!(
                    "unknown algorithm {s:?} (expected one of {})",
                    Algorithm::ALL.map(Algorithm::name).join(", ")
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightMode {
    DataProportional,
    Uniform,
}

/// Synthetic blob dataset parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub num_classes: usize,
    pub dim: usize,
    /// Examples per class before the validation set is carved out.
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub num_clients: usize,
    pub sampling_ratio: f64,
    pub rounds: usize,
    pub algorithm: Algorithm,
    pub score_fn: ScoreFunction,
    pub local: LocalHyper,
    pub partition: PartitionSpec,
    pub model: ModelSpec,
    pub data: DataSpec,
    pub val_per_class: usize,
    pub seed: u64,
    pub client_weights: WeightMode,
}

impl FederationConfig {
    /// Clients sampled per round: `round(ratio · |S|)`, at least one.
    pub fn clients_per_round(&self) -> usize {
        ((self.sampling_ratio * self.num_clients as f64).round() as usize).max(1)
    }

    /// Every violated constraint, reported together.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut push = |ok: bool, msg: String| {
            if !ok {
                v.push(msg)
            }
        };
        push(self.num_clients >= 1, "num_clients must be at least 1".into());
        push(
            self.sampling_ratio > 0.0 && self.sampling_ratio <= 1.0,
            format!("sampling_ratio must lie in (0, 1], got {}", self.sampling_ratio),
        );
        push(
            self.partition.num_clients == self.num_clients,
            format!(
                "partition.num_clients ({}) must equal num_clients ({})",
                self.partition.num_clients, self.num_clients
            ),
        );
        let mu = self.local.prox_mu;
        match self.algorithm {
            Algorithm::FedProx => push(mu > 0.0, "FedProx requires local.prox_mu > 0".into()),
            Algorithm::FedAvg | Algorithm::FedPdp => push(
                mu == 0.0,
                format!("{} requires local.prox_mu = 0, got {mu}", self.algorithm),
            ),
            _ => {}
        }
        if self.algorithm.filters() {
            push(
                self.clients_per_round() <= MAX_FILTER_CANDIDATES,
                format!(
                    "{} enumerates subsets of at most {MAX_FILTER_CANDIDATES} clients, sampling ratio gives {}",
                    self.algorithm,
                    self.clients_per_round()
                ),
            );
        }
        push(self.val_per_class >= 1, "val_per_class must be at least 1".into());
        for (what, r) in [
            ("local", self.local.validate()),
            ("partition", self.partition.validate()),
            ("model", self.model.validate()),
        ] {
            if let Err(e) = r {
                push(false, format!("{what}: {e}"));
            }
        }
        let d = &self.data;
        push(
            self.model.input_dim == d.dim,
            format!("model.input_dim ({}) must equal data.dim ({})", self.model.input_dim, d.dim),
        );
        push(
            self.model.num_classes == d.num_classes,
            format!(
                "model.num_classes ({}) must equal data.num_classes ({})",
                self.model.num_classes, d.num_classes
            ),
        );
        push(d.dim >= 1, "data.dim must be at least 1".into());
        push(d.test_per_class >= 1, "data.test_per_class must be at least 1".into());
        push(
            d.separation > 0.0 && d.separation.is_finite(),
            format!("data.separation must be positive, got {}", d.separation),
        );
        push(
            d.train_per_class > self.val_per_class,
            format!(
                "data.train_per_class ({}) must exceed val_per_class ({})",
                d.train_per_class, self.val_per_class
            ),
        );
        if self.partition.scheme == PartitionScheme::ClassHeterogeneity {
            let pool = d.num_classes * d.train_per_class.saturating_sub(self.val_per_class);
            let need = self.num_clients * self.partition.examples_per_client;
            push(
                need <= pool,
                format!("class heterogeneity needs {need} training examples, only {pool} remain after validation"),
            );
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(FedError::Config(v))
        }
    }
}

/// Features and labels held by one party.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalData {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl LocalData {
    fn from_indices(ds: &Dataset, indices: &[usize]) -> Self {
        let (features, labels) = ds.subset(indices);
        Self { features, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self) -> Batch<'_> {
        Batch {
            features: &self.features,
            labels: &self.labels,
        }
    }
}

/// Everything fixed for the lifetime of an experiment.
#[derive(Debug, Clone)]
pub struct Environment {
    pub train: Dataset,
    pub partition: Partition,
    pub clients: Vec<LocalData>,
    pub validation: LocalData,
    pub test: LocalData,
    pub weights: ClientWeightMap,
}

impl Environment {
    pub fn build(cfg: &FederationConfig) -> Result<Self> {
        cfg.validate()?;
        let root = RngStream::new(cfg.seed);
        let d = &cfg.data;
        let train = synth_dataset(
            d.num_classes,
            d.dim,
            d.train_per_class,
            d.separation,
            &mut root.derive(label::TRAIN),
        )?;
        let test_ds = synth_dataset(
            d.num_classes,
            d.dim,
            d.test_per_class,
            d.separation,
            &mut root.derive(label::TEST),
        )?;
        let (val_idx, pool) = build_validation_set(&train, cfg.val_per_class, &mut root.derive(label::VALIDATION))?;
        let partition = partition(&train, &pool, &cfg.partition, &mut root.derive(label::PARTITION))?;
        let clients: Vec<LocalData> = partition
            .shards
            .iter()
            .map(|s| LocalData::from_indices(&train, &s.indices))
            .collect();
        let sizes: Vec<usize> = clients.iter().map(LocalData::len).collect();
        let weights = client_weights(&sizes, cfg.client_weights)?;
        Ok(Self {
            validation: LocalData::from_indices(&train, &val_idx),
            test: LocalData::from_indices(&test_ds, &(0..test_ds.len()).collect::<Vec<_>>()),
            train,
            partition,
            clients,
            weights,
        })
    }
}

/// Aggregation weights from shard sizes.
pub fn client_weights(shard_sizes: &[usize], mode: WeightMode) -> Result<ClientWeightMap> {
    match mode {
        WeightMode::DataProportional => ClientWeightMap::proportional(shard_sizes),
        WeightMode::Uniform => ClientWeightMap::uniform(shard_sizes.len()),
    }
}

/// Top-1 accuracy of `w` on `data`.
pub fn accuracy(w: &ParamVector, spec: &ModelSpec, data: &LocalData) -> Result<f64> {
    if data.is_empty() {
        return Err(FedError::Empty("evaluation data"));
    }
    let logits = forward_logits(w, spec, &data.features)?;
    let hits = data
        .labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(logits.row(i)) == y)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

/// Accuracy of the global model on each client's own shard; `None` for empty shards.
pub fn per_client_accuracy(w: &ParamVector, clients: &[LocalData], spec: &ModelSpec) -> Result<Vec<Option<f64>>> {
    clients
        .iter()
        .map(|c| if c.is_empty() { Ok(None) } else { accuracy(w, spec, c).map(Some) })
        .collect()
}

/// Mutable state between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationState {
    /// Rounds completed so far.
    pub round: usize,
    pub global: ParamVector,
    pub sampler: SamplerState,
    /// Previous round's `(distinct sampled, kept)` sets; bandit reward input.
    pub feedback: Option<(Vec<ClientId>, Vec<ClientId>)>,
}

impl FederationState {
    pub fn initial(cfg: &FederationConfig) -> Self {
        let root = RngStream::new(cfg.seed);
        let global = ParamVector::random_uniform(&cfg.model, INIT_SCALE, &mut root.derive(label::INIT));
        let sampler = match cfg.algorithm.sampling() {
            SamplingScheme::BanditUcb => {
                SamplerState::Ucb(ucb_init(cfg.num_clients, &mut root.derive(label::SAMPLER_INIT)))
            }
            SamplingScheme::BanditTs => SamplerState::Ts(TsState::new(cfg.num_clients)),
            _ => SamplerState::Stateless,
        };
        Self {
            round: 0,
            global,
            sampler,
            feedback: None,
        }
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// Communication rounds completed, starting at 1.
    pub round: usize,
    pub algorithm: Algorithm,
    pub sampling: SamplingScheme,
    pub averaging: AveragingScheme,
    /// As drawn; repeats only under weighted sampling with replacement.
    pub sampled: Vec<ClientId>,
    /// Kept subset, sorted; `None` for algorithms without a filter.
    pub filtered: Option<Vec<ClientId>>,
    /// Score of the ensemble actually averaged.
    pub val_score: f64,
    /// Score of the ensemble of every distinct sampled model.
    pub unfiltered_score: f64,
    pub test_accuracy: f64,
    pub subsets_evaluated: u64,
    /// Sampler state after this round's selection.
    pub sampler: SamplerState,
    #[serde(with = "millis")]
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub threads: usize,
    /// Makes the filter keep every sampled model. Testing aid.
    pub force_full_filter: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            threads: 1,
            force_full_filter: false,
        }
    }
}

/// One communication round. The returned state replaces `state` wholesale.
pub fn run_round(
    env: &Environment,
    state: &FederationState,
    cfg: &FederationConfig,
    opts: &RunOptions,
) -> Result<(FederationState, RoundRecord)> {
    let started = Instant::now();
    let t = state.round;
    let m = cfg.clients_per_round();
    let n = cfg.num_clients;
    let round_rng = RngStream::new(cfg.seed).derive_path(&[label::ROUND, t as u64]);
    let feedback = state.feedback.as_ref().map(|(sampled, kept)| Feedback { sampled, kept });

    let (sampler, outcome) = match (&state.sampler, cfg.algorithm.sampling()) {
        (SamplerState::Stateless, SamplingScheme::Uniform) => (
            SamplerState::Stateless,
            sample_uniform(n, m, &mut round_rng.derive(label::SAMPLE))?,
        ),
        (SamplerState::Stateless, SamplingScheme::WeightedWithReplacement) => (
            SamplerState::Stateless,
            sample_weighted_replacement(&env.weights, m, &mut round_rng.derive(label::SAMPLE))?,
        ),
        (SamplerState::Ucb(ucb), SamplingScheme::BanditUcb) => {
            let (next, out) = ucb_update_and_select(ucb, feedback, t as u64 + 1, m)?;
            (SamplerState::Ucb(next), out)
        }
        (SamplerState::Ts(ts), SamplingScheme::BanditTs) => {
            let (next, out) = ts_update_and_select(ts, feedback, m, &round_rng.derive(label::SAMPLE))?;
            (SamplerState::Ts(next), out)
        }
        _ => {
            return Err(FedError::InvalidParameter {
                name: "sampler",
                reason: format!("state does not match {}", cfg.algorithm),
            })
        }
    };
    let sampled = outcome.sampled;
    let distinct: Vec<ClientId> = sampled.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();

    // Each distinct client trains once, on its own substream.
    let local: BTreeMap<ClientId, ParamVector> = distinct
        .par_iter()
        .map(|&k| {
            let data = &env.clients[k.0];
            let w = if data.is_empty() {
                state.global.clone()
            } else {
                let rng = round_rng.derive_path(&[label::LOCAL, k.0 as u64]);
                local_update(&state.global, &cfg.model, &data.features, &data.labels, &cfg.local, rng)?
            };
            Ok((k, w))
        })
        .collect::<Result<_>>()?;

    let val = env.validation.batch();
    let mut filtered = None;
    let mut subsets_evaluated = 0;
    let (global, val_score, unfiltered_score) = match cfg.algorithm.averaging() {
        AveragingScheme::Combinatorial => {
            let filter = if opts.force_full_filter {
                let s = score(val, &local, &distinct, &cfg.model, cfg.score_fn)?;
                FilterResult {
                    optimal_subset: distinct.clone(),
                    score: s,
                    full_set_score: s,
                    subsets_evaluated: 0,
                }
            } else {
                combinatorial_filter(&local, val, &cfg.model, cfg.score_fn)?
            };
            let w = average_ca(&local, &filter, &env.weights, n)?;
            subsets_evaluated = filter.subsets_evaluated;
            filtered = Some(filter.optimal_subset);
            (w, filter.score, filter.full_set_score)
        }
        scheme => {
            let w = match scheme {
                AveragingScheme::FedAvg => average_fedavg(&state.global, &local, &env.weights)?,
                AveragingScheme::Mean => average_mean(sampled.iter().map(|k| &local[k]))?,
                _ => average_pdp(&local, &env.weights, n)?,
            };
            let s = score(val, &local, &distinct, &cfg.model, cfg.score_fn)?;
            (w, s, s)
        }
    };
    if !global.is_finite() {
        return Err(FedError::NonFinite("model averaging"));
    }
    let test_accuracy = accuracy(&global, &cfg.model, &env.test)?;

    let feedback = match cfg.algorithm.sampling() {
        SamplingScheme::BanditUcb | SamplingScheme::BanditTs => {
            Some((distinct, filtered.clone().unwrap_or_default()))
        }
        _ => None,
    };
    let record = RoundRecord {
        round: t + 1,
        algorithm: cfg.algorithm,
        sampling: cfg.algorithm.sampling(),
        averaging: cfg.algorithm.averaging(),
        sampled,
        filtered,
        val_score,
        unfiltered_score,
        test_accuracy,
        subsets_evaluated,
        sampler: sampler.clone(),
        wall_time: started.elapsed(),
    };
    let next = FederationState {
        round: t + 1,
        global,
        sampler,
        feedback,
    };
    Ok((next, record))
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<RoundRecord>,
    pub initial: ParamVector,
    pub final_params: ParamVector,
}

impl ExperimentOutcome {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().map(|r| r.test_accuracy)
    }
}

/// Builds the environment from `cfg.seed` and runs `cfg.rounds` rounds.
pub fn run_experiment(cfg: &FederationConfig, opts: &RunOptions) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.max(1))
        .build()
        .map_err(|e| FedError::InvalidParameter {
            name: "threads",
            reason: e.to_string(),
        })?;
    pool.install(|| {
        let env = Environment::build(cfg)?;
        let mut state = FederationState::initial(cfg);
        let initial = state.global.clone();
        let mut records = Vec::with_capacity(cfg.rounds);
        for _ in 0..cfg.rounds {
            let (next, record) = run_round(&env, &state, cfg, opts)?;
            log::debug!(
                "{} round {}: acc {:.4} kept {:?}",
                cfg.algorithm,
                record.round,
                record.test_accuracy,
                record.filtered
            );
            state = next;
            records.push(record);
        }
        Ok(ExperimentOutcome {
            records,
            initial,
            final_params: state.global,
        })
    })
}

/// First completed round whose test accuracy reaches `target`.
pub fn rounds_to_target(records: &[RoundRecord], target: f64) -> Option<usize> {
    records.iter().find(|r| r.test_accuracy >= target).map(|r| r.round)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config(algorithm: Algorithm) -> FederationConfig {
        FederationConfig {
            num_clients: 6,
            sampling_ratio: 0.5,
            rounds: 3,
            algorithm,
            score_fn: ScoreFunction::ClassificationLoss,
            local: LocalHyper {
                eta: 0.1,
                momentum: 0.5,
                weight_decay: 1e-4,
                prox_mu: if algorithm == Algorithm::FedProx { 0.1 } else { 0.0 },
                batch_size: 8,
                local_epochs: 1,
            },
            partition: PartitionSpec {
                scheme: PartitionScheme::ClassHeterogeneity,
                alpha: 0.5,
                num_clients: 6,
                examples_per_client: 20,
            },
            model: ModelSpec::logistic(3, 3),
            data: DataSpec {
                num_classes: 3,
                dim: 3,
                train_per_class: 60,
                test_per_class: 20,
                separation: 2.0,
            },
            val_per_class: 5,
            seed: 17,
            client_weights: WeightMode::DataProportional,
        }
    }

    fn record(round: usize, acc: f64) -> RoundRecord {
        RoundRecord {
            round,
            algorithm: Algorithm::FedAvg,
            sampling: SamplingScheme::Uniform,
            averaging: AveragingScheme::FedAvg,
            sampled: vec![],
            filtered: None,
            val_score: 0.0,
            unfiltered_score: 0.0,
            test_accuracy: acc,
            subsets_evaluated: 0,
            sampler: SamplerState::Stateless,
            wall_time: Duration::ZERO,
        }
    }

    #[test]
    fn algorithm_names_roundtrip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.name()));
        }
        assert_eq!("fedcm_ts".parse::<Algorithm>().unwrap(), Algorithm::FedCmTs);
        assert!("FedXYZ".parse::<Algorithm>().is_err());
    }

    #[test]
    fn dispatch_table() {
        use AveragingScheme as A;
        use SamplingScheme as S;
        let rows = [
            (Algorithm::FedAvg, S::Uniform, A::FedAvg),
            (Algorithm::FedProx, S::WeightedWithReplacement, A::Mean),
            (Algorithm::FedPdp, S::Uniform, A::Pdp),
            (Algorithm::FedCa, S::Uniform, A::Combinatorial),
            (Algorithm::FedCmUcb, S::BanditUcb, A::Combinatorial),
            (Algorithm::FedCmTs, S::BanditTs, A::Combinatorial),
        ];
        for (a, s, avg) in rows {
            assert_eq!((a.sampling(), a.averaging()), (s, avg), "{a}");
        }
    }

    #[test]
    fn config_violations_are_collected() {
        let mut cfg = small_config(Algorithm::FedAvg);
        cfg.sampling_ratio = 0.0;
        cfg.local.prox_mu = 0.1;
        cfg.val_per_class = 0;
        let v = cfg.violations();
        assert_eq!(v.len(), 3, "{v:?}");
        assert!(v[0].contains("sampling_ratio"));

        let mut prox = small_config(Algorithm::FedProx);
        prox.local.prox_mu = 0.0;
        assert!(prox.validate().is_err());
    }

    #[test]
    fn clients_per_round_rounds_and_clamps() {
        let mut cfg = small_config(Algorithm::FedAvg);
        cfg.num_clients = 20;
        cfg.sampling_ratio = 0.4;
        assert_eq!(cfg.clients_per_round(), 8);
        cfg.sampling_ratio = 0.01;
        assert_eq!(cfg.clients_per_round(), 1);
    }

    #[test]
    fn client_weight_modes() {
        let p = client_weights(&[10, 30], WeightMode::DataProportional).unwrap();
        assert_eq!(p.as_slice(), &[0.25, 0.75]);
        let p = client_weights(&[10, 30], WeightMode::Uniform).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
        let eq = client_weights(&[7, 7, 7], WeightMode::DataProportional).unwrap();
        assert!(eq.as_slice().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn rounds_to_target_scan() {
        let recs: Vec<_> = (1..=10).map(|r| record(r, r as f64 * 0.07)).collect();
        assert_eq!(rounds_to_target(&recs, 0.5), Some(8));
        let recs: Vec<_> = (1..=10).map(|r| record(r, 0.1 * r as f64 - 0.2)).collect();
        assert_eq!(rounds_to_target(&recs, 0.5), Some(7));
        assert_eq!(rounds_to_target(&recs, 0.95), None);
    }

    #[test]
    fn zero_rounds_returns_init() {
        let mut cfg = small_config(Algorithm::FedPdp);
        cfg.rounds = 0;
        let out = run_experiment(&cfg, &RunOptions::default()).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.final_params, out.initial);
        assert_eq!(out.initial, FederationState::initial(&cfg).global);
    }

    #[test]
    fn per_client_accuracy_conventions() {
        let spec = ModelSpec::logistic(1, 2);
        // Predicts class 1 iff x > 0.
        let w = ParamVector::new(vec![-1.0, 1.0, 0.0, 0.0]);
        let shard = LocalData {
            features: Matrix::from_rows(&[vec![-1.0], vec![2.0], vec![0.5], vec![-3.0], vec![1.0]]).unwrap(),
            labels: vec![0, 1, 0, 0, 1],
        };
        let empty = LocalData {
            features: Matrix::zeros(0, 1),
            labels: vec![],
        };
        let got = per_client_accuracy(&w, &[shard.clone(), empty], &spec).unwrap();
        let hits = shard
            .labels
            .iter()
            .enumerate()
            .filter(|&(i, &y)| (shard.features.get(i, 0) > 0.0) as usize == y)
            .count();
        assert_eq!(got, vec![Some(hits as f64 / 5.0), None]);
    }
}
