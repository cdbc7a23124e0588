//! Batch verification runs: configuration, presets and file output.
//!
//! Exit codes: 0 ok, 1 acceptance-level violations, 2 solver or I/O
//! failure, 3 configuration error.

mod config;
mod experiment;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;

pub use config::{
    parse_config, parse_config_with, random_modes, DiagnosticsSpec, ExperimentConfig, InitialSpec,
    Mode, Overrides, Preset, RandomSpectrum, Resolution, StudySpec, AMPLITUDE_LIMIT,
};
pub use experiment::{
    identity_test_data, run_experiment, simulate, ExitStatus, IdentityRow, Outcome, RunSummary,
};
pub use output::{emit_outputs, snapshot_text, timeseries_csv, OutputPaths, SnapshotMeta};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("I/O error on {}: {message}", path.display())]
    Io { path: PathBuf, message: String },

    #[error("no records to write")]
    EmptyRecords,

    #[error(transparent)]
    Solver(#[from] crate::Error),
}

impl CliError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub fn status(&self) -> ExitStatus {
        match self {
            CliError::Config(_) => ExitStatus::ConfigError,
            _ => ExitStatus::SolverFailure,
        }
    }
}

/// Command-line flags. Each one has a config-file key of the same name and
/// takes precedence over it.
#[derive(Debug, Clone, Parser)]
#[command(
    name = "heleshaw",
    version,
    about = "Hele-Shaw free-boundary simulator and verification harness"
)]
pub struct Args {
    /// TOML experiment config; defaults apply without one.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// lyapunov, elliptic, entropy, convergence or identities.
    #[arg(long, value_name = "NAME")]
    pub preset: Option<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed of the random initial spectrum and test data.
    #[arg(long, value_name = "INT")]
    pub seed: Option<u64>,
    /// Accept initial amplitudes above the guard.
    #[arg(long)]
    pub override_amplitude: bool,
}

impl Args {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset.clone(),
            output_dir: self.out.clone(),
            seed: self.seed,
            override_amplitude: self.override_amplitude,
        }
    }
}

/// Loads the config named by `args` and applies the flags.
pub fn load(args: &Args) -> Result<ExperimentConfig, CliError> {
    let text = match &args.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| CliError::Config(vec![format!("cannot read {}: {e}", path.display())]))?,
        None => String::new(),
    };
    parse_config_with(&text, &args.overrides())
}

/// Runs the binary: prints the summary on stdout and errors on stderr.
pub fn main_with(args: &Args) -> ExitCode {
    let status = match load(args).and_then(|cfg| run_experiment(&cfg)) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            outcome.status
        }
        Err(e) => {
            eprintln!("heleshaw: {e}");
            e.status()
        }
    };
    ExitCode::from(status.code())
}
