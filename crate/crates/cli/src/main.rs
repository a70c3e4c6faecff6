use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use fedcm_core::data::PartitionManifest;
use fedcm_core::orchestrator::{Algorithm, Environment};
use fedcm_cli::{parse_config, run_suite, SuiteOptions};

/// Federated-learning experiment runner.
///
/// Log verbosity follows `FEDCM_LOG` (e.g. `FEDCM_LOG=debug`).
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, seed) pair of a suite file.
    Run {
        config: PathBuf,
        /// Output directory; created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads per run. Results do not depend on it.
        #[arg(long, env = "FEDCM_THREADS", default_value_t = 1)]
        threads: usize,
        /// Replace the suite's algorithm list.
        #[arg(long, value_delimiter = ',')]
        algorithms: Option<Vec<Algorithm>>,
        /// Replace the suite's seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Record measured round times in the CSVs (breaks byte-identical reruns).
        #[arg(long)]
        wall_time: bool,
    },
    /// Write the client partition of a suite's data as JSON.
    Partition {
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Seed to partition with; defaults to the first suite seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDCM_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            out,
            threads,
            algorithms,
            seeds,
            wall_time,
        } => {
            if threads == 0 {
                bail!("--threads must be at least 1");
            }
            let mut suite = parse_config(&config)?;
            if let Some(a) = algorithms {
                suite.algorithms = a;
            }
            if let Some(s) = seeds {
                suite.seeds = s;
            }
            let summary = run_suite(&suite, &out, &SuiteOptions { threads, wall_time })?;
            let failed = summary.runs.iter().filter(|r| !r.ok).count();
            if failed > 0 {
                log::error!("{failed} of {} runs failed", summary.runs.len());
            }
            log::info!("reports written to {}", out.display());
            Ok(ExitCode::from(summary.exit_code() as u8))
        }
        Command::Partition { config, manifest, seed } => {
            let suite = parse_config(&config)?;
            let mut cfg = suite.base.clone();
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let env = Environment::build(&cfg).context("building the federation")?;
            PartitionManifest::new(cfg.partition, cfg.seed, &env.partition)
                .write(&manifest)
                .with_context(|| format!("writing {}", manifest.display()))?;
            log::info!(
                "{} clients ({} empty) written to {}",
                env.partition.shards.len(),
                env.partition.empty_clients.len(),
                manifest.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}
