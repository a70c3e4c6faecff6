//! Runs every `(algorithm, seed)` pair of a suite and writes the reports.
//!
//! Layout under the output directory:
//! `runs/<algorithm>-seed<seed>/{rounds.csv, sampler.jsonl, summary.json}`,
//! `summary.json`, `comparison.md` and `metadata.json`. Everything except
//! `metadata.json` is byte-identical across reruns.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use fedcm_core::orchestrator::{rounds_to_target, run_experiment, Algorithm, RoundRecord, RunOptions};
use fedcm_core::report::{write_round_csv, write_sampler_log, RunSummary, TargetResult};
use serde::Serialize;

use crate::config::ExperimentSuite;
use crate::SuiteError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteOptions {
    pub threads: usize,
    /// Write measured round times into the CSVs; they are 0 otherwise.
    pub wall_time: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            threads: 1,
            wall_time: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunEntry {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub final_accuracy: Option<f64>,
    pub best_accuracy: Option<f64>,
    pub rounds_to_target: Vec<TargetResult>,
    /// Rounds to reach the baseline's final accuracy on the same seed.
    pub rounds_to_baseline_final: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundsAggregate {
    /// Absent for the baseline-final column, whose target varies by seed.
    pub target: Option<f64>,
    /// Successful seeds that reached the target.
    pub reached: usize,
    /// Mean rounds, present only when every successful seed reached it.
    pub mean_rounds: Option<f64>,
    /// Baseline mean rounds over this algorithm's mean rounds.
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgorithmAggregate {
    pub algorithm: Algorithm,
    pub seeds_ok: usize,
    pub seeds_failed: usize,
    pub final_accuracy: Option<MeanStd>,
    pub rounds_to_target: Vec<RoundsAggregate>,
    pub rounds_to_baseline_final: RoundsAggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteSummary {
    pub config: ExperimentSuite,
    pub runs: Vec<RunEntry>,
    pub aggregates: Vec<AlgorithmAggregate>,
}

impl SuiteSummary {
    pub fn all_ok(&self) -> bool {
        self.runs.iter().all(|r| r.ok)
    }

    pub fn exit_code(&self) -> i32 {
        if self.all_ok() {
            0
        } else {
            1
        }
    }
}

#[derive(Serialize)]
struct RunTiming {
    algorithm: Algorithm,
    seed: u64,
    started_unix_ms: u128,
    wall_ms: u128,
}

#[derive(Serialize)]
struct Metadata {
    version: &'static str,
    threads: usize,
    started_unix_ms: u128,
    finished_unix_ms: u128,
    runs: Vec<RunTiming>,
}

fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> SuiteError {
    SuiteError::Io(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), SuiteError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types always serialize");
    s.push('\n');
    s
}

pub fn run_dir_name(algorithm: Algorithm, seed: u64) -> String {
    format!("{}-seed{seed}", algorithm.name().to_lowercase())
}

/// Runs the suite, writes every report and returns the summary. Failed runs
/// are recorded and the rest still execute; only output I/O errors abort.
pub fn run_suite(suite: &ExperimentSuite, out_dir: &Path, opts: &SuiteOptions) -> Result<SuiteSummary, SuiteError> {
    suite.validate()?;
    let runs_dir = out_dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| io_err(&runs_dir, e))?;
    let started = unix_ms();
    let run_opts = RunOptions {
        threads: opts.threads,
        ..RunOptions::default()
    };

    let mut records: BTreeMap<(Algorithm, u64), Result<Vec<RoundRecord>, String>> = BTreeMap::new();
    let mut timings = Vec::new();
    for &alg in &suite.algorithms {
        for &seed in &suite.seeds {
            let cfg = suite.config_for(alg, seed);
            log::info!("running {alg} seed {seed}");
            let run_started = unix_ms();
            let clock = Instant::now();
            let result = run_experiment(&cfg, &run_opts).map_err(|e| e.to_string());
            timings.push(RunTiming {
                algorithm: alg,
                seed,
                started_unix_ms: run_started,
                wall_ms: clock.elapsed().as_millis(),
            });
            let result = match result {
                Ok(out) => {
                    let dir = runs_dir.join(run_dir_name(alg, seed));
                    write_run(&dir, &cfg, &out.records, suite, opts).map(|_| out.records)
                }
                Err(e) => Err(e),
            };
            match &result {
                Ok(recs) => log::info!(
                    "{alg} seed {seed}: final accuracy {:.4}",
                    recs.last().map_or(f64::NAN, |r| r.test_accuracy)
                ),
                Err(e) => log::error!("{alg} seed {seed} failed: {e}"),
            }
            records.insert((alg, seed), result);
        }
    }

    let summary = summarize(suite, &records);
    write_text(&out_dir.join("summary.json"), &to_json(&summary))?;
    write_text(&out_dir.join("comparison.md"), &comparison_table(&summary))?;
    let meta = Metadata {
        version: env!("CARGO_PKG_VERSION"),
        threads: opts.threads,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        runs: timings,
    };
    write_text(&out_dir.join("metadata.json"), &to_json(&meta))?;
    Ok(summary)
}

fn write_run(
    dir: &Path,
    cfg: &fedcm_core::orchestrator::FederationConfig,
    records: &[RoundRecord],
    suite: &ExperimentSuite,
    opts: &SuiteOptions,
) -> Result<(), String> {
    let write = || -> Result<(), SuiteError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let csv_path: PathBuf = dir.join("rounds.csv");
        let file = fs::File::create(&csv_path).map_err(|e| io_err(&csv_path, e))?;
        write_round_csv(file, records, opts.wall_time)?;
        write_sampler_log(&dir.join("sampler.jsonl"), records)?;
        let summary = RunSummary::new(cfg, records, &suite.targets);
        write_text(&dir.join("summary.json"), &to_json(&summary))
    };
    write().map_err(|e| e.to_string())
}

/// Builds per-run entries and per-algorithm aggregates.
pub fn summarize(
    suite: &ExperimentSuite,
    records: &BTreeMap<(Algorithm, u64), Result<Vec<RoundRecord>, String>>,
) -> SuiteSummary {
    let baseline_final = |seed: u64| -> Option<f64> {
        match records.get(&(suite.baseline, seed)) {
            Some(Ok(r)) => r.last().map(|r| r.test_accuracy),
            _ => None,
        }
    };

    let mut runs = Vec::new();
    for &alg in &suite.algorithms {
        for &seed in &suite.seeds {
            let entry = match &records[&(alg, seed)] {
                Ok(recs) => {
                    let s = RunSummary::new(&suite.config_for(alg, seed), recs, &suite.targets);
                    RunEntry {
                        algorithm: alg,
                        seed,
                        ok: true,
                        error: None,
                        final_accuracy: s.final_accuracy,
                        best_accuracy: s.best_accuracy,
                        rounds_to_target: s.rounds_to_target,
                        rounds_to_baseline_final: baseline_final(seed).and_then(|t| rounds_to_target(recs, t)),
                    }
                }
                Err(e) => RunEntry {
                    algorithm: alg,
                    seed,
                    ok: false,
                    error: Some(e.clone()),
                    final_accuracy: None,
                    best_accuracy: None,
                    rounds_to_target: Vec::new(),
                    rounds_to_baseline_final: None,
                },
            };
            runs.push(entry);
        }
    }

    let rounds_agg = |target: Option<f64>, values: Vec<Option<usize>>| {
        let reached: Vec<f64> = values.iter().flatten().map(|&r| r as f64).collect();
        RoundsAggregate {
            target,
            reached: reached.len(),
            mean_rounds: if !values.is_empty() && reached.len() == values.len() {
                MeanStd::of(&reached).map(|m| m.mean)
            } else {
                None
            },
            speedup: None,
        }
    };
    let mut aggregates: Vec<AlgorithmAggregate> = suite
        .algorithms
        .iter()
        .map(|&alg| {
            let ok: Vec<&RunEntry> = runs.iter().filter(|r| r.algorithm == alg && r.ok).collect();
            let finals: Vec<f64> = ok.iter().filter_map(|r| r.final_accuracy).collect();
            AlgorithmAggregate {
                algorithm: alg,
                seeds_ok: ok.len(),
                seeds_failed: suite.seeds.len() - ok.len(),
                final_accuracy: MeanStd::of(&finals),
                rounds_to_target: suite
                    .targets
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| rounds_agg(Some(t), ok.iter().map(|r| r.rounds_to_target[i].rounds).collect()))
                    .collect(),
                rounds_to_baseline_final: rounds_agg(None, ok.iter().map(|r| r.rounds_to_baseline_final).collect()),
            }
        })
        .collect();

    if let Some(base) = aggregates.iter().find(|a| a.algorithm == suite.baseline).cloned() {
        let ratio = |b: &RoundsAggregate, a: &RoundsAggregate| match (b.mean_rounds, a.mean_rounds) {
            (Some(b), Some(a)) if a > 0.0 => Some(b / a),
            _ => None,
        };
        for agg in &mut aggregates {
            for (i, col) in agg.rounds_to_target.iter_mut().enumerate() {
                col.speedup = ratio(&base.rounds_to_target[i], col);
            }
            agg.rounds_to_baseline_final.speedup = ratio(&base.rounds_to_baseline_final, &agg.rounds_to_baseline_final);
        }
    }

    SuiteSummary {
        config: suite.clone(),
        runs,
        aggregates,
    }
}

/// `"1×"` for a unit ratio, two decimals otherwise.
pub fn format_speedup(x: f64) -> String {
    if x == 1.0 {
        "1×".to_string()
    } else {
        format!("{x:.2}×")
    }
}

fn format_rounds(col: &RoundsAggregate) -> String {
    let Some(mean) = col.mean_rounds else {
        return "-".to_string();
    };
    let rounds = if mean.fract() == 0.0 {
        format!("{mean}")
    } else {
        format!("{mean:.1}")
    };
    match col.speedup {
        Some(s) => format!("{rounds} ({})", format_speedup(s)),
        None => rounds,
    }
}

/// Markdown comparison table over algorithms.
pub fn comparison_table(summary: &SuiteSummary) -> String {
    let suite = &summary.config;
    let mut out = String::new();
    let _ = writeln!(out, "# Comparison\n");
    let _ = writeln!(
        out,
        "Final test accuracy is mean ± sample std over {} seed(s). Rounds are mean communication rounds to reach \
         each target; speedups are relative to {}. `-` means some seed never reached the target.\n",
        suite.seeds.len(),
        suite.baseline
    );
    let mut header = vec!["Algorithm".to_string(), "Final accuracy".to_string()];
    header.extend(suite.targets.iter().map(|t| format!("Rounds to {t}")));
    header.push(format!("Rounds to {} final", suite.baseline));
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for agg in &summary.aggregates {
        let mut row = vec![agg.algorithm.to_string()];
        row.push(match agg.final_accuracy {
            Some(m) => format!("{:.4} ± {:.4}", m.mean, m.std),
            None => "-".to_string(),
        });
        row.extend(agg.rounds_to_target.iter().map(format_rounds));
        row.push(format_rounds(&agg.rounds_to_baseline_final));
        let _ = writeln!(out, "| {} |", row.join(" | "));
    }
    let failed: Vec<String> = summary
        .runs
        .iter()
        .filter(|r| !r.ok)
        .map(|r| format!("- {} seed {}: {}", r.algorithm, r.seed, r.error.as_deref().unwrap_or("")))
        .collect();
    if !failed.is_empty() {
        let _ = writeln!(out, "\nFailed runs:\n\n{}", failed.join("\n"));
    }
    out
}
