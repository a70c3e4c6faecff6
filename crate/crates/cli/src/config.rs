//! Strict TOML experiment-suite format.
//!
//! Every key is optional except `algorithms` and `seeds`. Unknown keys,
//! type errors and configuration invariants are all collected and reported
//! together.

use std::collections::BTreeSet;
use std::path::Path;

use fedcm_core::aggregation::ScoreFunction;
use fedcm_core::data::{PartitionScheme, PartitionSpec};
use fedcm_core::model::{Architecture, LocalHyper, ModelSpec};
use fedcm_core::orchestrator::{Algorithm, DataSpec, FederationConfig, WeightMode};
use serde::Serialize;
use toml::{Table, Value};

use crate::SuiteError;

pub const DEFAULT_FEDPROX_MU: f64 = 0.1;

/// A batch of `(algorithm, seed)` runs sharing one base configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSuite {
    /// Shared settings. `algorithm`, `seed` and `local.prox_mu` are
    /// overridden per run.
    pub base: FederationConfig,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    /// Absolute test-accuracy targets for rounds-to-target.
    pub targets: Vec<f64>,
    /// Reference algorithm for speedup ratios.
    pub baseline: Algorithm,
    /// Proximal weight applied to FedProx runs only.
    pub fedprox_mu: f64,
}

impl ExperimentSuite {
    /// The configuration of one run.
    pub fn config_for(&self, algorithm: Algorithm, seed: u64) -> FederationConfig {
        let mut cfg = self.base.clone();
        cfg.algorithm = algorithm;
        cfg.seed = seed;
        cfg.local.prox_mu = if algorithm == Algorithm::FedProx {
            self.fedprox_mu
        } else {
            0.0
        };
        cfg
    }

    /// Every violated constraint, deduplicated, in a stable order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.algorithms.is_empty() {
            v.push("algorithms must not be empty".to_string());
        }
        if self.seeds.is_empty() {
            v.push("seeds must not be empty".to_string());
        }
        if self.algorithms.iter().collect::<BTreeSet<_>>().len() != self.algorithms.len() {
            v.push("algorithms must not repeat".to_string());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            v.push("seeds must not repeat".to_string());
        }
        for t in &self.targets {
            if !(0.0..=1.0).contains(t) {
                v.push(format!("targets must lie in [0, 1], got {t}"));
            }
        }
        let algorithms = if self.algorithms.is_empty() {
            vec![Algorithm::FedAvg]
        } else {
            self.algorithms.clone()
        };
        for alg in algorithms {
            for msg in self.config_for(alg, self.base.seed).violations() {
                if !v.contains(&msg) {
                    v.push(msg);
                }
            }
        }
        v
    }

    pub fn validate(&self) -> Result<(), SuiteError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(SuiteError::Invalid(v))
        }
    }
}

/// Reads and validates a suite file.
pub fn parse_config(path: &Path) -> Result<ExperimentSuite, SuiteError> {
    let text = std::fs::read_to_string(path).map_err(|e| SuiteError::Io(format!("{}: {e}", path.display())))?;
    parse_str(&text)
}

/// Parses suite text. See the crate README for the key reference.
pub fn parse_str(text: &str) -> Result<ExperimentSuite, SuiteError> {
    let mut root: Table = text.parse().map_err(|e: toml::de::Error| SuiteError::Syntax(e.to_string()))?;
    let mut r = Reader::default();

    let algorithms = match root.remove("algorithms") {
        None => {
            r.errors.push("missing required key `algorithms`".into());
            Vec::new()
        }
        Some(v) => r.list(v, "algorithms", |r, v, key| r.algorithm(v, key)),
    };
    let seeds = match root.remove("seeds") {
        None => {
            r.errors.push("missing required key `seeds`".into());
            Vec::new()
        }
        Some(v) => r.list(v, "seeds", |r, v, key| r.u64(v, key)),
    };
    let targets = root
        .remove("targets")
        .map(|v| r.list(v, "targets", |r, v, key| r.f64(v, key)))
        .unwrap_or_default();
    let baseline = r.take(&mut root, "", "baseline", Reader::algorithm).unwrap_or(Algorithm::FedAvg);
    let fedprox_mu = r.take(&mut root, "", "fedprox_mu", Reader::f64).unwrap_or(DEFAULT_FEDPROX_MU);

    let mut fed = r.section(&mut root, "federation");
    let num_clients = r.take(&mut fed, "federation.", "num_clients", Reader::usize).unwrap_or(20);
    let sampling_ratio = r.take(&mut fed, "federation.", "sampling_ratio", Reader::f64).unwrap_or(0.4);
    let rounds = r.take(&mut fed, "federation.", "rounds", Reader::usize).unwrap_or(50);
    let score_fn = r
        .take(&mut fed, "federation.", "score_fn", Reader::score_fn)
        .unwrap_or(ScoreFunction::ClassificationLoss);
    let val_per_class = r.take(&mut fed, "federation.", "val_per_class", Reader::usize).unwrap_or(50);
    let client_weights = r
        .take(&mut fed, "federation.", "client_weights", Reader::weight_mode)
        .unwrap_or(WeightMode::DataProportional);
    r.unknown(fed, "federation.");

    let mut loc = r.section(&mut root, "local");
    let local = LocalHyper {
        eta: r.take(&mut loc, "local.", "eta", Reader::f64).unwrap_or(0.01),
        momentum: r.take(&mut loc, "local.", "momentum", Reader::f64).unwrap_or(0.0),
        weight_decay: r.take(&mut loc, "local.", "weight_decay", Reader::f64).unwrap_or(0.0),
        prox_mu: 0.0,
        batch_size: r.take(&mut loc, "local.", "batch_size", Reader::usize).unwrap_or(10),
        local_epochs: r.take(&mut loc, "local.", "local_epochs", Reader::usize).unwrap_or(1),
    };
    r.unknown(loc, "local.");

    let mut part = r.section(&mut root, "partition");
    let partition = PartitionSpec {
        scheme: r
            .take(&mut part, "partition.", "scheme", Reader::scheme)
            .unwrap_or(PartitionScheme::ClassHeterogeneity),
        alpha: r.take(&mut part, "partition.", "alpha", Reader::f64).unwrap_or(0.1),
        num_clients,
        examples_per_client: r
            .take(&mut part, "partition.", "examples_per_client", Reader::usize)
            .unwrap_or(200),
    };
    r.unknown(part, "partition.");

    let mut dat = r.section(&mut root, "data");
    let data = DataSpec {
        num_classes: r.take(&mut dat, "data.", "num_classes", Reader::usize).unwrap_or(10),
        dim: r.take(&mut dat, "data.", "dim", Reader::usize).unwrap_or(20),
        train_per_class: r.take(&mut dat, "data.", "train_per_class", Reader::usize).unwrap_or(500),
        test_per_class: r.take(&mut dat, "data.", "test_per_class", Reader::usize).unwrap_or(200),
        separation: r.take(&mut dat, "data.", "separation", Reader::f64).unwrap_or(3.0),
    };
    r.unknown(dat, "data.");

    let mut mdl = r.section(&mut root, "model");
    let architecture = r
        .take(&mut mdl, "model.", "architecture", Reader::architecture)
        .unwrap_or(Architecture::LogisticRegression);
    let hidden_units = r.take(&mut mdl, "model.", "hidden_units", Reader::usize);
    r.unknown(mdl, "model.");
    let model = match architecture {
        Architecture::LogisticRegression => {
            if hidden_units.is_some() {
                r.errors.push("model.hidden_units only applies to architecture \"mlp1\"".into());
            }
            ModelSpec::logistic(data.dim, data.num_classes)
        }
        Architecture::Mlp1 => ModelSpec::mlp(data.dim, hidden_units.unwrap_or(64), data.num_classes),
    };

    r.unknown(root, "");

    let suite = ExperimentSuite {
        base: FederationConfig {
            num_clients,
            sampling_ratio,
            rounds,
            algorithm: algorithms.first().copied().unwrap_or(Algorithm::FedAvg),
            score_fn,
            local,
            partition,
            model,
            data,
            val_per_class,
            seed: seeds.first().copied().unwrap_or(0),
            client_weights,
        },
        algorithms,
        seeds,
        targets,
        baseline,
        fedprox_mu,
    };
    let mut errors = r.errors;
    // Invariant checks on half-read input would only repeat type errors.
    if errors.is_empty() {
        errors = suite.violations();
    }
    if errors.is_empty() {
        Ok(suite)
    } else {
        Err(SuiteError::Invalid(errors))
    }
}

/// Serializes a suite in the format `parse_str` reads.
pub fn to_toml(suite: &ExperimentSuite) -> String {
    let b = &suite.base;
    let mut root = Table::new();
    root.insert(
        "algorithms".into(),
        Value::Array(suite.algorithms.iter().map(|a| Value::String(a.name().into())).collect()),
    );
    root.insert(
        "seeds".into(),
        Value::Array(suite.seeds.iter().map(|&s| Value::Integer(s as i64)).collect()),
    );
    root.insert(
        "targets".into(),
        Value::Array(suite.targets.iter().map(|&t| Value::Float(t)).collect()),
    );
    root.insert("baseline".into(), Value::String(suite.baseline.name().into()));
    root.insert("fedprox_mu".into(), Value::Float(suite.fedprox_mu));

    let int = |n: usize| Value::Integer(n as i64);
    let mut fed = Table::new();
    fed.insert("num_clients".into(), int(b.num_clients));
    fed.insert("sampling_ratio".into(), Value::Float(b.sampling_ratio));
    fed.insert("rounds".into(), int(b.rounds));
    fed.insert("score_fn".into(), Value::String(score_fn_name(b.score_fn).into()));
    fed.insert("val_per_class".into(), int(b.val_per_class));
    fed.insert("client_weights".into(), Value::String(weight_mode_name(b.client_weights).into()));
    root.insert("federation".into(), Value::Table(fed));

    let mut loc = Table::new();
    loc.insert("eta".into(), Value::Float(b.local.eta));
    loc.insert("momentum".into(), Value::Float(b.local.momentum));
    loc.insert("weight_decay".into(), Value::Float(b.local.weight_decay));
    loc.insert("batch_size".into(), int(b.local.batch_size));
    loc.insert("local_epochs".into(), int(b.local.local_epochs));
    root.insert("local".into(), Value::Table(loc));

    let mut part = Table::new();
    part.insert("scheme".into(), Value::String(scheme_name(b.partition.scheme).into()));
    part.insert("alpha".into(), Value::Float(b.partition.alpha));
    part.insert("examples_per_client".into(), int(b.partition.examples_per_client));
    root.insert("partition".into(), Value::Table(part));

    let mut dat = Table::new();
    dat.insert("num_classes".into(), int(b.data.num_classes));
    dat.insert("dim".into(), int(b.data.dim));
    dat.insert("train_per_class".into(), int(b.data.train_per_class));
    dat.insert("test_per_class".into(), int(b.data.test_per_class));
    dat.insert("separation".into(), Value::Float(b.data.separation));
    root.insert("data".into(), Value::Table(dat));

    let mut mdl = Table::new();
    mdl.insert(
        "architecture".into(),
        Value::String(architecture_name(b.model.architecture).into()),
    );
    if b.model.architecture == Architecture::Mlp1 {
        mdl.insert("hidden_units".into(), int(b.model.hidden_units));
    }
    root.insert("model".into(), Value::Table(mdl));

    toml::to_string(&root).expect("a plain table always serializes")
}

fn score_fn_name(s: ScoreFunction) -> &'static str {
    match s {
        ScoreFunction::DiracDelta => "dirac_delta",
        ScoreFunction::ClassificationLoss => "classification_loss",
    }
}

fn weight_mode_name(w: WeightMode) -> &'static str {
    match w {
        WeightMode::DataProportional => "data_proportional",
        WeightMode::Uniform => "uniform",
    }
}

fn scheme_name(s: PartitionScheme) -> &'static str {
    match s {
        PartitionScheme::ClientHeterogeneity => "client_heterogeneity",
        PartitionScheme::ClassHeterogeneity => "class_heterogeneity",
    }
}

fn architecture_name(a: Architecture) -> &'static str {
    match a {
        Architecture::LogisticRegression => "logistic_regression",
        Architecture::Mlp1 => "mlp1",
    }
}

/// Typed extraction that records errors instead of stopping at the first.
#[derive(Default)]
struct Reader {
    errors: Vec<String>,
}

impl Reader {
    fn take<T>(
        &mut self,
        table: &mut Table,
        prefix: &str,
        key: &str,
        read: impl FnOnce(&mut Self, Value, &str) -> Option<T>,
    ) -> Option<T> {
        let v = table.remove(key)?;
        read(self, v, &format!("{prefix}{key}"))
    }

    fn section(&mut self, root: &mut Table, name: &str) -> Table {
        match root.remove(name) {
            None => Table::new(),
            Some(Value::Table(t)) => t,
            Some(other) => {
                self.errors.push(format!("`{name}` must be a table, got {}", other.type_str()));
                Table::new()
            }
        }
    }

    fn unknown(&mut self, rest: Table, prefix: &str) {
        for key in rest.keys() {
            self.errors.push(format!("unknown key `{prefix}{key}`"));
        }
    }

    fn list<T>(&mut self, v: Value, key: &str, mut read: impl FnMut(&mut Self, Value, &str) -> Option<T>) -> Vec<T> {
        match v {
            Value::Array(items) => items
                .into_iter()
                .enumerate()
                .filter_map(|(i, item)| read(self, item, &format!("{key}[{i}]")))
                .collect(),
            other => {
                self.errors.push(format!("`{key}` must be an array, got {}", other.type_str()));
                Vec::new()
            }
        }
    }

    fn fail<T>(&mut self, key: &str, expected: &str, got: &Value) -> Option<T> {
        self.errors.push(format!("`{key}` must be {expected}, got {got}"));
        None
    }

    fn usize(&mut self, v: Value, key: &str) -> Option<usize> {
        match v {
            Value::Integer(i) if i >= 0 => usize::try_from(i).ok(),
            other => self.fail(key, "a non-negative integer", &other),
        }
    }

    fn u64(&mut self, v: Value, key: &str) -> Option<u64> {
        match v {
            Value::Integer(i) if i >= 0 => Some(i as u64),
            other => self.fail(key, "a non-negative integer", &other),
        }
    }

    fn f64(&mut self, v: Value, key: &str) -> Option<f64> {
        match v {
            Value::Float(f) => Some(f),
            Value::Integer(i) => Some(i as f64),
            other => self.fail(key, "a number", &other),
        }
    }

    fn choice<T: Copy>(&mut self, v: Value, key: &str, options: &[(&str, T)]) -> Option<T> {
        let names: Vec<String> = options.iter().map(|(n, _)| format!("\"{n}\"")).collect();
        match &v {
            Value::String(s) => match options.iter().find(|(n, _)| n == s) {
                Some((_, t)) => Some(*t),
                None => self.fail(key, &format!("one of {}", names.join(", ")), &v),
            },
            _ => self.fail(key, &format!("one of {}", names.join(", ")), &v),
        }
    }

    fn algorithm(&mut self, v: Value, key: &str) -> Option<Algorithm> {
        match &v {
            Value::String(s) => match s.parse() {
                Ok(a) => Some(a),
                Err(e) => {
                    self.errors.push(format!("`{key}`: {e}"));
                    None
                }
            },
            _ => self.fail(key, "an algorithm name", &v),
        }
    }

    fn score_fn(&mut self, v: Value, key: &str) -> Option<ScoreFunction> {
        self.choice(
            v,
            key,
            &[
                ("dirac_delta", ScoreFunction::DiracDelta),
                ("classification_loss", ScoreFunction::ClassificationLoss),
            ],
        )
    }

    fn weight_mode(&mut self, v: Value, key: &str) -> Option<WeightMode> {
        self.choice(
            v,
            key,
            &[
                ("data_proportional", WeightMode::DataProportional),
                ("uniform", WeightMode::Uniform),
            ],
        )
    }

    fn scheme(&mut self, v: Value, key: &str) -> Option<PartitionScheme> {
        self.choice(
            v,
            key,
            &[
                ("client_heterogeneity", PartitionScheme::ClientHeterogeneity),
                ("class_heterogeneity", PartitionScheme::ClassHeterogeneity),
            ],
        )
    }

    fn architecture(&mut self, v: Value, key: &str) -> Option<Architecture> {
        self.choice(
            v,
            key,
            &[
                ("logistic_regression", Architecture::LogisticRegression),
                ("mlp1", Architecture::Mlp1),
            ],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_a_minimal_file() {
        let s = parse_str("algorithms = [\"FedAvg\"]\nseeds = [7]\n").unwrap();
        assert_eq!(s.base.num_clients, 20);
        assert_eq!(s.base.partition.num_clients, 20);
        assert_eq!(s.base.model, ModelSpec::logistic(20, 10));
        assert_eq!(s.baseline, Algorithm::FedAvg);
        assert_eq!(s.fedprox_mu, 0.1);
        assert_eq!(s.base.seed, 7);
        assert!(s.targets.is_empty());
    }

    #[test]
    fn all_problems_reported_together() {
        let text = "algorithms = [\"FedFoo\"]\nseeds = [-1]\ncolour = 3\n[local]\neta = \"fast\"\nepochs = 2\n";
        let SuiteError::Invalid(v) = parse_str(text).unwrap_err() else {
            panic!("expected a validation error")
        };
        assert_eq!(v.len(), 5, "{v:?}");
        assert!(v.iter().any(|m| m.contains("unknown key `colour`")));
        assert!(v.iter().any(|m| m.contains("unknown key `local.epochs`")));
        assert!(v.iter().any(|m| m.contains("local.eta")));
        assert!(v.iter().any(|m| m.contains("FedFoo")));
        assert!(v.iter().any(|m| m.contains("seeds[0]")));
    }

    #[test]
    fn invariants_are_listed_at_once() {
        let text = "algorithms = [\"FedAvg\", \"FedAvg\"]\nseeds = []\n[federation]\nsampling_ratio = 0\n";
        let SuiteError::Invalid(v) = parse_str(text).unwrap_err() else {
            panic!("expected a validation error")
        };
        assert!(v.iter().any(|m| m.contains("sampling_ratio")));
        assert!(v.iter().any(|m| m.contains("seeds must not be empty")));
        assert!(v.iter().any(|m| m.contains("algorithms must not repeat")));
    }

    #[test]
    fn prox_weight_goes_to_fedprox_only() {
        let s = parse_str("algorithms = [\"FedProx\", \"FedCA\"]\nseeds = [1]\nfedprox_mu = 0.3\n").unwrap();
        assert_eq!(s.config_for(Algorithm::FedProx, 1).local.prox_mu, 0.3);
        assert_eq!(s.config_for(Algorithm::FedCa, 1).local.prox_mu, 0.0);
    }

    #[test]
    fn hidden_units_need_mlp() {
        assert!(parse_str("algorithms = [\"FedAvg\"]\nseeds = [1]\n[model]\nhidden_units = 4\n").is_err());
        let s = parse_str("algorithms = [\"FedAvg\"]\nseeds = [1]\n[model]\narchitecture = \"mlp1\"\nhidden_units = 4\n")
            .unwrap();
        assert_eq!(s.base.model, ModelSpec::mlp(20, 4, 10));
    }
}
