//! Command-line frontend.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Result;
pub use commands::{exit_code, run_subcommand, Command, Outcome};
pub use config::{parse_config, ScenarioConfig};

#[derive(Debug, Parser)]
#[command(name = "qkf", version, about = "Quantum Kalman filtering and PID feedback of a cavity mode")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML).
    config: PathBuf,
    /// Output directory, overriding `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Integrate the covariance equations.
    Riccati(Common),
    /// Open-loop truth and filter on one record.
    Filter(Common),
    /// PID-controlled co-simulation.
    ClosedLoop(Common),
    /// Monte Carlo ensemble with innovations and MSE verdicts.
    Ensemble {
        #[command(flatten)]
        common: Common,
        /// Exit with status 4 if a statistical test fails.
        #[arg(long)]
        assert: bool,
    },
    /// Frequency and step responses of G, K and H.
    Tf(Common),
    /// PI pole placement.
    Tune(Common),
    /// Discrete Kalman, Kalman-Bucy and Zakai grid filters on one record.
    Classical(Common),
}

fn execute(cmd: Command, common: &Common, assert: bool) -> Result<Outcome> {
    let text = std::fs::read_to_string(&common.config).map_err(|e| crate::Error::ConfigValue {
        path: common.config.display().to_string(),
        message: e.to_string(),
    })?;
    let cfg = parse_config(&text)?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    run_subcommand(cmd, &cfg, &out, assert)
}

/// Parses `args`, runs the subcommand and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (cmd, common, assert) = match &cli.command {
        Sub::Riccati(c) => (Command::Riccati, c, false),
        Sub::Filter(c) => (Command::Filter, c, false),
        Sub::ClosedLoop(c) => (Command::ClosedLoop, c, false),
        Sub::Ensemble { common, assert } => (Command::Ensemble, common, *assert),
        Sub::Tf(c) => (Command::Tf, c, false),
        Sub::Tune(c) => (Command::Tune, c, false),
        Sub::Classical(c) => (Command::Classical, c, false),
    };
    let result = execute(cmd, common, assert);
    let code = exit_code(&result);
    match &result {
        Ok(o) => {
            for f in &o.files {
                log::info!("wrote {}", f.display());
            }
            if o.assertion_failed {
                eprintln!("qkf {}: statistical test failed", cmd.name());
            }
        }
        Err(e) => eprintln!("qkf {}: {e}", cmd.name()),
    }
    code
}
