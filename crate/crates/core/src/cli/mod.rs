//! Config-driven experiment runner behind the `spatial-bd` binary.
//!
//! Every subcommand reads one TOML [`ExperimentConfig`], writes its
//! CSV/JSON artifacts into the output directory and finishes with a
//! `manifest.json` that lists each file with its SHA-256. All randomness
//! flows from the master seed through named substreams, so a rerun with
//! the same config and seed reproduces every CSV byte for byte.
//!
//! Exit codes: 0 success, 1 failed verification or I/O trouble, 2 schema
//! or domain error, 3 population cap hit (partial outputs are written),
//! 4 numerical blow-up of the hierarchy solver.

mod commands;
pub mod config;
mod output;
pub mod verify;

pub use config::ExperimentConfig;
pub use output::{Manifest, OutputDir};

use crate::dynamics::DynamicsError;
use crate::estimators::EstimatorError;
use crate::hierarchy::HierarchyError;
use crate::kernels::KernelError;
use crate::pointset::PointsetError;
use crate::theory::TheoryError;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("population cap {cap} reached in replica {replica} at t = {time}; partial outputs written")]
    PopulationCap { replica: usize, cap: usize, time: f64 },
    #[error("numerical blow-up: {0}")]
    BlowUp(String),
    #[error("{0} verification check(s) failed")]
    VerifyFailed(usize),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Domain(_) => 2,
            CliError::PopulationCap { .. } => 3,
            CliError::BlowUp(_) => 4,
            CliError::VerifyFailed(_) | CliError::Runtime(_) | CliError::Io(_) => 1,
        }
    }

    fn status(&self) -> &'static str {
        match self {
            CliError::Config(_) | CliError::Domain(_) => "domain_error",
            CliError::PopulationCap { .. } => "population_cap",
            CliError::BlowUp(_) => "blow_up",
            CliError::VerifyFailed(_) => "verify_failed",
            CliError::Runtime(_) | CliError::Io(_) => "runtime_error",
        }
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<PointsetError> for CliError {
    fn from(e: PointsetError) -> Self {
        match e {
            PointsetError::Io(io) => CliError::Io(io),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::PopulationCap { cap, time, .. } => CliError::PopulationCap { replica: 0, cap, time },
            DynamicsError::StaleEvent(_) => CliError::Runtime(e.to_string()),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::Io(io) => CliError::Io(io),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<HierarchyError> for CliError {
    fn from(e: HierarchyError) -> Self {
        match e {
            HierarchyError::BlowUp { .. } | HierarchyError::ClipExceeded { .. } | HierarchyError::ClosureFloor { .. } => {
                CliError::BlowUp(e.to_string())
            }
            HierarchyError::Io(io) => CliError::Io(io),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<TheoryError> for CliError {
    fn from(e: TheoryError) -> Self {
        match e {
            TheoryError::Io(io) => CliError::Io(io),
            other => CliError::Domain(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "spatial-bd", version, about = "Spatial birth-and-death experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Subcommand)]
pub enum Command {
    /// Run replicated trajectories and write density series.
    Simulate(CommonArgs),
    /// Integrate the truncated correlation hierarchy.
    Hierarchy(CommonArgs),
    /// Simulate, then estimate density, pair correlation and window moments.
    Estimate(CommonArgs),
    /// Search and validate domination constants.
    Certify(CommonArgs),
    /// Evaluate the operator-norm bound and long-time envelopes.
    Bound(CommonArgs),
    /// Run the stationary, extinction and exact-law checks.
    Verify(CommonArgs),
}

#[derive(Clone, Debug, clap::Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Overrides `outputs.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Hierarchy(_) => "hierarchy",
            Command::Estimate(_) => "estimate",
            Command::Certify(_) => "certify",
            Command::Bound(_) => "bound",
            Command::Verify(_) => "verify",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Simulate(a)
            | Command::Hierarchy(a)
            | Command::Estimate(a)
            | Command::Certify(a)
            | Command::Bound(a)
            | Command::Verify(a) => a,
        }
    }
}

/// Runs one subcommand and returns the process exit code. Diagnostics go
/// to stderr, the verify table to stdout.
pub fn run(command: &Command) -> i32 {
    match execute(command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("spatial-bd {}: {e}", command.name());
            e.exit_code()
        }
    }
}

/// Like [`run`] but returns the error.
pub fn execute(command: &Command) -> Result<(), CliError> {
    let started = Instant::now();
    let args = command.args();
    let config_text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let config = ExperimentConfig::from_toml(&config_text)?;
    let seed = args.seed.unwrap_or(config.seed);
    let dir = args
        .out
        .clone()
        .or_else(|| config.outputs.dir.clone())
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set outputs.dir".into()))?;
    let mut out = OutputDir::create(&dir)?;

    let threads = args.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let result = pool.install(|| commands::dispatch(command, &config, seed, &mut out));

    let mut manifest = Manifest::new(command.name(), seed, pool.current_num_threads(), &args.config, config_text.as_bytes());
    if let Ok(pair) = config.model.pair() {
        manifest.truncation_errors = Some([pair.dispersal.truncation_error(), pair.competition.truncation_error()]);
    }
    manifest.status = match &result {
        Ok(()) => "ok",
        Err(e) => e.status(),
    };
    manifest.wall_time_seconds = started.elapsed().as_secs_f64();
    out.finish(manifest)?;
    result
}
