//! Driver for `zoisim-core`: configuration parsing, the `simulate`,
//! `meanfield`, `converge` and `validate` subcommands, and the oracle checks
//! shared with the acceptance suite.

pub mod checks;
pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{Outcome, Run, RunError};

#[derive(Debug, Parser)]
#[command(name = "zoisim", version, about = "Spatial forest dynamics with zone-of-influence competition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run replicas of the individual-based model.
    Simulate(Common),
    /// Solve the deterministic large-population limit.
    Meanfield(Common),
    /// Tabulate the distance between scaled simulations and the limit.
    Converge(Common),
    /// Run the oracle checks on the configured model.
    Validate(Common),
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the configured replica count.
    #[arg(long)]
    pub replicas: Option<usize>,
    /// Suppress progress and report lines on stdout.
    #[arg(long)]
    pub quiet: bool,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate(c) | Command::Meanfield(c) | Command::Converge(c) | Command::Validate(c) => c,
        }
    }
}

/// Loads the configuration, applies overrides and runs the command.
pub fn execute(command: &Command) -> Result<Outcome, RunError> {
    let common = command.common();
    let loaded = config::parse_config(&common.config)?;
    let mut cfg = loaded.config;
    if let Some(n) = common.replicas {
        cfg.replicas = n;
        cfg.validate()?;
    }
    let run = Run {
        seed: common.seed.unwrap_or(cfg.seed),
        out: commands::resolve_output(&cfg, &common.config, common.out.clone()),
        config: cfg,
        config_sha256: loaded.sha256,
        quiet: common.quiet,
    };
    match command {
        Command::Simulate(_) => commands::simulate(&run),
        Command::Meanfield(_) => commands::meanfield(&run),
        Command::Converge(_) => commands::converge(&run),
        Command::Validate(_) => commands::validate(&run),
    }
}

/// Exit status: 0 success, 1 failed check, 2 configuration error, 3 aborted
/// run.
pub fn main_with(cli: Cli) -> i32 {
    match execute(&cli.command) {
        Ok(outcome) if outcome.failed => 1,
        Ok(_) => 0,
        Err(e) => {
            eprintln!("zoisim: {e}");
            e.exit_code()
        }
    }
}
