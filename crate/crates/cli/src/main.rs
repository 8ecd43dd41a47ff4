mod commands;
mod config;
mod error;
mod schema;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::ScenarioConfig;
use crate::error::CliError;

/// Classical-quantum hybrid dynamics: simulation, spectra and audits.
#[derive(Debug, Parser)]
#[command(name = "cqdyn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for randomized checks; overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Integrate the master equation; writes trajectory.csv and summary.json.
    Simulate,
    /// Liouvillian spectrum; writes spectrum.json.
    Spectrum,
    /// Symmetry, conservation and consistency checks; writes audit.json.
    Audit,
    /// Diffusion-decoherence relation; writes dd.json.
    CheckDd,
    /// Toy model run with simulate, spectrum and audit outputs.
    Toy,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("CQDYN_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("CQDYN_THREADS: expected a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("CQDYN_THREADS: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let config = match (&cli.config, cli.command) {
        (Some(path), _) => ScenarioConfig::load(path)?,
        (None, Command::Toy) => ScenarioConfig::toy_default(),
        (None, _) => return Err(CliError::Config("--config: a scenario file is required".into())),
    };
    let ctx = Context::new(config, cli.out, cli.seed)?;
    log::info!("running {:?} into {}", cli.command, ctx.out.display());
    match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Spectrum => commands::spectrum(&ctx),
        Command::Audit => commands::audit(&ctx),
        Command::CheckDd => commands::check_dd(&ctx),
        Command::Toy => commands::toy(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
