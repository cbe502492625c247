//! Command-line experiment runner.
//!
//! Subcommands: `run` executes a config and writes its artifacts, `validate`
//! checks a config without simulating, `oracle` prints closed-form
//! quantities for a config's problem, `list-checks` enumerates claim ids.
//! Exit codes: 0 when all checks pass, 2 when a check fails, 1 on error.

pub mod config;
pub mod run;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;

pub use config::{
    locate, problem_from_toml, problem_to_config, problem_to_toml, ExperimentConfig, ExperimentKind, SpecConfig,
};
pub use run::{run_experiment, write_artifacts, DataFile, ExperimentOutput};

use crate::diagnostics::{bounds, exact_coupling_ratio, SpecSummary, CLAIMS};
use crate::error::Result;
use crate::model::{validate_step_size, StepSizeReport};
use crate::oracle::oracle_for;
use crate::rng::RngStream;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sgdchain", version, about = "Monte Carlo diagnostics for constant step-size SGD")]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true, env = "SGDCHAIN_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment and write report.json, report.csv, summary.txt and data CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `out`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run even if beta violates the ergodicity condition.
        #[arg(long)]
        force_step_size: bool,
    },
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print closed-form quantities for the config's problem as JSON.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List claim ids and their descriptions.
    ListChecks,
}

#[derive(Debug, Serialize)]
struct OracleOutput {
    beta: f64,
    spec: SpecSummary,
    step_size: StepSizeReport,
    variance_bound: f64,
    contraction_factor: f64,
    alpha_w: f64,
    drift_slope: f64,
    drift_intercept: f64,
    exact_coupling_ratio: Option<f64>,
    stationary_mean: Option<Vec<f64>>,
    stationary_cov: Option<Vec<Vec<f64>>>,
    stationary_trace: Option<f64>,
    ar_matrix: Option<Vec<Vec<f64>>>,
    lyapunov_relative_residual: Option<f64>,
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn oracle_output(cfg: &ExperimentConfig) -> Result<String> {
    let beta = match (cfg.beta, &cfg.beta_grid) {
        (Some(b), _) => b,
        (None, Some(g)) if !g.is_empty() => g[0],
        _ => cfg.beta()?,
    };
    let (spec, noise) = cfg.build_problem(RngStream::new(cfg.master_seed))?;
    let oracle = oracle_for(&spec, &noise, beta).ok();
    let out = OracleOutput {
        beta,
        spec: SpecSummary::new(&spec, &noise),
        step_size: validate_step_size(&spec, beta, None),
        variance_bound: bounds::variance_bound(&spec, beta),
        contraction_factor: bounds::contraction_factor(&spec, beta),
        alpha_w: bounds::alpha_w(&spec, beta),
        drift_slope: bounds::drift_slope(&spec, beta),
        drift_intercept: bounds::drift_intercept(&spec, beta),
        exact_coupling_ratio: exact_coupling_ratio(&spec, &noise, beta),
        stationary_mean: oracle.as_ref().map(|o| o.stat_mean.iter().copied().collect()),
        stationary_cov: oracle.as_ref().map(|o| rows(&o.stat_cov)),
        stationary_trace: oracle.as_ref().map(|o| o.stat_cov.trace()),
        ar_matrix: oracle.as_ref().map(|o| rows(&o.ar_matrix)),
        lyapunov_relative_residual: oracle.as_ref().map(|o| o.relative_residual),
    };
    Ok(serde_json::to_string_pretty(&out)?)
}

/// Executes a parsed command line and returns the process exit code.
/// Machine-readable output goes to stdout, progress to stderr.
pub fn execute(cli: Cli) -> Result<i32> {
    if let Some(n) = cli.threads {
        // Fails only if a global pool already exists, e.g. in tests.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match cli.command {
        Command::Run { config, seed, out, force_step_size } => {
            let mut cfg = load(&config, seed)?;
            if let Some(dir) = out {
                cfg.out = Some(dir);
            }
            cfg.force_step_size |= force_step_size;
            let dir = cfg.output_dir();
            info!("running {} (seed {}) into {}", cfg.kind.name(), cfg.master_seed, dir.display());
            let mut output = run_experiment(&cfg)?;
            output.report.stamp_now();
            write_artifacts(&dir, &output)?;
            print!("{}", output.report.summary());
            Ok(output.exit_code())
        }
        Command::Validate { config } => {
            let cfg = load(&config, None)?;
            cfg.validate()?;
            println!("ok: {} ({})", config.display(), cfg.kind.name());
            Ok(EXIT_PASS)
        }
        Command::Oracle { config, seed } => {
            let cfg = load(&config, seed)?;
            println!("{}", oracle_output(&cfg)?);
            Ok(EXIT_PASS)
        }
        Command::ListChecks => {
            for (id, description) in CLAIMS {
                println!("{id}\t{description}");
            }
            Ok(EXIT_PASS)
        }
    }
}
