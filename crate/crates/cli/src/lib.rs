//! Front end for `uio-core`: loads JSON systems, runs the synthesis,
//! condition-check and simulation pipelines, and writes reports.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

pub use config::{parse_config, parse_system, LoadedSystem, SystemFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_AUDIT: i32 = 4;
pub const EXIT_BOUND: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] uio_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use uio_core::Error as E;
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) | CliError::Json(_) => EXIT_OTHER,
            CliError::Core(e) => match e {
                E::Infeasible(_) | E::ConditionsViolated(_) => EXIT_INFEASIBLE,
                E::AuditFailed(_) => EXIT_AUDIT,
                E::BoundViolation(_) => EXIT_BOUND,
                E::NonFinite { .. }
                | E::NotSymmetric { .. }
                | E::Dimension { .. }
                | E::UnknownNonlinearity { .. }
                | E::UnknownSignal { .. }
                | E::InvalidParams { .. }
                | E::NoMultiplierFamily { .. }
                | E::InvalidOption(_) => EXIT_CONFIG,
                _ => EXIT_OTHER,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            EXIT_INFEASIBLE => "infeasible",
            EXIT_CONFIG => "config",
            EXIT_AUDIT => "audit",
            EXIT_BOUND => "bound_violation",
            _ => "error",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "error": {
                "kind": self.kind(),
                "exit_code": self.exit_code(),
                "message": self.to_string(),
            }
        })
    }
}

#[derive(Debug, Clone, Parser)]
#[command(
    name = "uio",
    version,
    about = "LMI-certified extended-state observers"
)]
pub struct RunConfig {
    #[command(subcommand)]
    pub mode: Mode,
    #[command(flatten)]
    pub opts: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Mode {
    /// Minimize the squared gain over the decay-rate grid and write the certificate.
    Synthesize,
    /// Detectability, exogenous-model compatibility and arbitrary-accuracy conditions.
    Check,
    /// Simulate plant and observer, write the CSV trace and check the certified bounds.
    Simulate,
    /// Design gains for a prescribed performance level `--gamma`.
    ArbitraryAccuracy,
    /// Run the magnetic-bearing example end to end.
    ReproduceExample,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// System description (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for result.json, trace.csv and report.txt.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Previously written result.json (for `simulate`).
    #[arg(long, global = true)]
    pub result: Option<PathBuf>,
    #[arg(long, global = true)]
    pub alpha_max: Option<f64>,
    /// Number of decay-rate grid points.
    #[arg(long, global = true)]
    pub alpha_grid: Option<usize>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    #[arg(long, global = true)]
    pub t_end: Option<f64>,
    /// Target performance level for `arbitrary-accuracy`.
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Strictness margin of the LMIs.
    #[arg(long, global = true)]
    pub margin: Option<f64>,
    /// Floor on the smallest eigenvalue of the Lyapunov matrix.
    #[arg(long, global = true)]
    pub eps_pd: Option<f64>,
    /// Bound on the norm of the LMI decision variables. Limits the gain size.
    #[arg(long, global = true)]
    pub radius: Option<f64>,
    /// Seed for sampled checks.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Print the report (or error) as JSON.
    #[arg(long, global = true)]
    pub json: bool,
}

/// What a command produced: a text report, its JSON twin and the exit
/// status it maps to.
#[derive(Debug, Clone)]
pub struct Report {
    pub text: String,
    pub json: serde_json::Value,
    pub status: i32,
}

pub fn run(cfg: &RunConfig) -> Result<Report, CliError> {
    if let Some(dir) = &cfg.opts.out {
        std::fs::create_dir_all(dir)?;
    }
    let report = match cfg.mode {
        Mode::Synthesize => commands::synthesize(&cfg.opts)?,
        Mode::Check => commands::check(&cfg.opts)?,
        Mode::Simulate => commands::simulate(&cfg.opts)?,
        Mode::ArbitraryAccuracy => commands::arbitrary_accuracy(&cfg.opts)?,
        Mode::ReproduceExample => commands::reproduce_example(&cfg.opts)?,
    };
    if let Some(dir) = &cfg.opts.out {
        std::fs::write(dir.join("report.txt"), &report.text)?;
    }
    Ok(report)
}
