//! `wtb`: trace wind-tree billiards, renormalize, analyze and sweep.

mod config;
mod run;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ConfigError, Mode, RunConfig, Settings};
use run::RunError;

#[derive(Parser)]
#[command(name = "wtb", version, about = "Wind-tree tiling billiards: tracing, renormalization and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Flat `key = value` file; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Subcommand)]
enum Command {
    /// Trace in the plane: trajectory.csv, plot.svg
    TracePlane(Common),
    /// Trace the vertical flow on the quotient torus: trajectory.csv, surface.json
    TraceSurface(Common),
    /// Run both models from one start and compare: report.json
    Compare(Common),
    /// Renormalize the vertical flow: renorm.jsonl
    Renorm(Common),
    /// Strip fit, exponents and audit: report.json, plot.svg
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Exit with status 4 unless the run passes the trapping, direction and audit checks
        #[arg(long)]
        check: bool,
    },
    /// Analyze random tuples in parallel: report.json
    Sweep(Common),
}

fn settings(c: Common) -> Result<Settings, ConfigError> {
    match &c.config {
        Some(path) => Ok(c.settings.or(Settings::from_file(path)?)),
        None => Ok(c.settings),
    }
}

fn execute(cli: Cli) -> Result<(), RunError> {
    let (mode, common, check) = match cli.command {
        Command::TracePlane(c) => (Mode::TracePlane, c, false),
        Command::TraceSurface(c) => (Mode::TraceSurface, c, false),
        Command::Compare(c) => (Mode::Compare, c, false),
        Command::Renorm(c) => (Mode::Renorm, c, false),
        Command::Analyze { common, check } => (Mode::Analyze, common, check),
        Command::Sweep(c) => (Mode::Sweep, c, false),
    };
    let cfg = RunConfig::resolve(mode, settings(common)?)?;
    run::run(&cfg, check)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wtb: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
