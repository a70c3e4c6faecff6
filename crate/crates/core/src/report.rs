//! Round logs and per-run summaries.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::orchestrator::{rounds_to_target, FederationConfig, RoundRecord};
use crate::ClientId;

pub const ROUND_CSV_HEADER: [&str; 8] = [
    "round",
    "algorithm",
    "sampled_ids",
    "filtered_ids",
    "val_score",
    "test_acc",
    "subsets_evaluated",
    "wall_ms",
];

/// Marker written in `filtered_ids` for algorithms without a filter.
pub const NO_FILTER: &str = "-";

pub fn join_ids(ids: &[ClientId]) -> String {
    ids.iter().map(|k| k.0.to_string()).collect::<Vec<_>>().join("+")
}

/// Writes the round log. Wall-clock times vary between runs, so `wall_ms` is
/// zeroed unless `wall_time` is set.
pub fn write_round_csv<W: Write>(out: W, records: &[RoundRecord], wall_time: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ROUND_CSV_HEADER)?;
    for r in records {
        let filtered = r.filtered.as_deref().map_or_else(|| NO_FILTER.to_string(), join_ids);
        let wall = if wall_time { r.wall_time.as_millis() } else { 0 };
        w.write_record([
            r.round.to_string(),
            r.algorithm.name().to_string(),
            join_ids(&r.sampled),
            filtered,
            r.val_score.to_string(),
            r.test_accuracy.to_string(),
            r.subsets_evaluated.to_string(),
            wall.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn round_csv_string(records: &[RoundRecord], wall_time: bool) -> Result<String> {
    let mut buf = Vec::new();
    write_round_csv(&mut buf, records, wall_time)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// One JSON line per round holding the sampler's state after selection.
pub fn write_sampler_log(path: &Path, records: &[RoundRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        #[derive(Serialize)]
        struct Line<'a> {
            round: usize,
            state: &'a crate::sampling::SamplerState,
        }
        text.push_str(&serde_json::to_string(&Line {
            round: r.round,
            state: &r.sampler,
        })?);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub target: f64,
    pub rounds: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: FederationConfig,
    pub rounds_run: usize,
    pub final_accuracy: Option<f64>,
    pub best_accuracy: Option<f64>,
    pub rounds_to_target: Vec<TargetResult>,
}

impl RunSummary {
    pub fn new(config: &FederationConfig, records: &[RoundRecord], targets: &[f64]) -> Self {
        Self {
            config: config.clone(),
            rounds_run: records.len(),
            final_accuracy: records.last().map(|r| r.test_accuracy),
            best_accuracy: records.iter().map(|r| r.test_accuracy).reduce(f64::max),
            rounds_to_target: targets
                .iter()
                .map(|&target| TargetResult {
                    target,
                    rounds: rounds_to_target(records, target),
                })
                .collect(),
        }
    }
}
