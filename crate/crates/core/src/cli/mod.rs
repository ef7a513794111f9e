//! Command-line entry points.
//!
//! | command        | output                                   |
//! |----------------|------------------------------------------|
//! | `simulate`     | time-series CSV and JSON run summary     |
//! | `audit-kernel` | JSON audit report                        |
//! | `sweep`        | truncation-convergence CSV               |
//! | `equilibrium`  | JSON equilibrium report                  |
//!
//! Exit codes: 0 success, 2 configuration error, 3 kernel-audit failure,
//! 4 integrator abort, 5 partial sweep failure.

pub mod commands;
pub mod config;
pub mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use commands::{audit_kernel, equilibrium, resummarize, simulate, summarize_series, sweep, RunSummary, SeriesSummary};
pub use config::RunConfig;

#[derive(Debug, Error, PartialEq)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("kernel audit failed: {0}")]
    Audit(String),
    #[error("integrator aborted: {0}")]
    Integrator(String),
    #[error("sweep incomplete: {0}")]
    PartialSweep(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Audit(_) => 3,
            CliError::Integrator(_) => 4,
            CliError::PartialSweep(_) => 5,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dged", version, about = "Truncated exchange-driven cluster kinetics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate a configured run and write its time series and summary.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit the configured kernel and verify its certificate, if any.
    AuditKernel {
        #[arg(long)]
        config: PathBuf,
        /// Largest index checked; defaults to the configured N.
        #[arg(long)]
        cap: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate at several truncation sizes and tabulate the differences.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated, strictly increasing truncation sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        n_list: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detailed-balance equilibrium with prescribed mass.
    Equilibrium {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn execute(command: &Command) -> Result<String, CliError> {
    match command {
        Command::Simulate { config, out } => {
            let s = simulate(config, out.as_deref())?;
            Ok(format!(
                "simulated {} (N = {}): p0 drift {:e}, p1 drift {:e}, {} steps accepted, {} rejected{}",
                s.kernel,
                s.config.n,
                s.series.p0_drift,
                s.series.p1_drift,
                s.step_stats.accepted,
                s.step_stats.rejected,
                if s.drift_flagged { " [drift flagged]" } else { "" }
            ))
        }
        Command::AuditKernel { config, cap, out } => {
            let a = audit_kernel(config, *cap, out.as_deref())?;
            Ok(format!("kernel {} passes at cap {}", a.kernel, a.cap))
        }
        Command::Sweep { config, n_list, out } => {
            let s = sweep(config, n_list, out.as_deref())?;
            Ok(format!("sweep over N = {n_list:?}: {} rows", s.rows))
        }
        Command::Equilibrium { config, rho, out } => {
            let e = equilibrium(config, *rho, out.as_deref())?;
            Ok(format!(
                "z = {:?}, detailed-balance residual {:e}, rhs max-norm {:e} (flux scale {:e})",
                e.z, e.detailed_balance_residual.max, e.rhs_max_norm, e.flux_scale
            ))
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(message) => {
            println!("{message}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
