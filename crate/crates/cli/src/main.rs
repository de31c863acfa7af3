//! Batch harness: one subcommand per experiment, CSV tables and JSON reports.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("solver failure: {0}")]
    Solver(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Precondition(_) => 3,
            CliError::Solver(_) => 4,
        }
    }
}

impl From<multibump::Error> for CliError {
    fn from(e: multibump::Error) -> Self {
        use multibump::Error as E;
        match e {
            E::InvalidGrid(_)
            | E::InvalidField(_)
            | E::GridMismatch
            | E::InvalidParameter(_)
            | E::Precondition(_)
            | E::AssumptionViolation { .. }
            | E::MisalignedTranslation { .. }
            | E::PositivityViolation { .. }
            | E::NoInstability { .. }
            | E::CriticalExponent { .. }
            | E::OutOfRange { .. } => CliError::Precondition(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "multibump", version, about = "Normalized multibump standing waves: solve, glue, classify, evolve")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides MULTIBUMP_OUT and the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for independent jobs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Steps between stored snapshots in `evolve`; 0 stores none.
    #[arg(long, global = true, default_value_t = 0)]
    snapshot_stride: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Single-bump constrained critical point with its spectral report.
    Groundstate,
    /// Glue n translated bumps over the configured separations.
    Glue,
    /// Classify an existing field.
    Spectrum {
        #[arg(long)]
        field: PathBuf,
        /// Multiplier to use instead of the Rayleigh quotient.
        #[arg(long, allow_hyphen_values = true)]
        lambda: Option<f64>,
    },
    /// Propagate a perturbed standing wave and fit its departure rate.
    Evolve {
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Rescaled family, criterion table and the optional mass-matched glue.
    Semiclassical,
    /// Gluing sweep over exponents and bump counts.
    Sweep,
}

pub struct Context {
    pub cfg: RunConfig,
    pub config_hash: String,
    pub out: PathBuf,
    pub jobs: usize,
    pub snapshot_stride: usize,
}

impl Context {
    pub fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| CliError::Config(format!("cannot build worker pool: {e}")))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli.config.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let (cfg, config_hash) = RunConfig::load(&path)?;
    if cli.jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let out = cli
        .out
        .or_else(|| std::env::var_os("MULTIBUMP_OUT").map(PathBuf::from))
        .unwrap_or_else(|| cfg.output.clone());
    std::fs::create_dir_all(&out).map_err(|e| CliError::Config(format!("cannot create {}: {e}", out.display())))?;
    multibump::linalg::use_sequential();
    let ctx = Context {
        cfg,
        config_hash,
        out,
        jobs: cli.jobs,
        snapshot_stride: cli.snapshot_stride,
    };
    match cli.command {
        Command::Groundstate => commands::groundstate(&ctx).map(|_| ()),
        Command::Glue => commands::glue(&ctx),
        Command::Spectrum { field, lambda } => commands::spectrum(&ctx, &field, lambda),
        Command::Evolve { field } => commands::evolve(&ctx, field.as_deref()),
        Command::Semiclassical => commands::semiclassical(&ctx),
        Command::Sweep => commands::sweep(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("multibump: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
