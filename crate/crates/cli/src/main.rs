//! `globcoup`: batch experiments for the coupling library.
//!
//! Exit status: 0 when every check holds, 1 when some check is violated,
//! 2 for invalid flags or configuration, 3 for runtime failures.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "globcoup", version, about = "Global coupling experiments")]
struct Cli {
    /// Master seed; every random quantity derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replica budget; each subcommand has its own default.
    #[arg(long, global = true)]
    replicas: Option<usize>,
    /// Directory receiving `<command>.json` and `<command>.csv`.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// TOML file with one table per subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Exponential race coincidence against the exact value.
    Race,
    /// Couple two densities through one Poisson process.
    Couple,
    /// Law checks on base and spliced point processes.
    PppCheck,
    /// Influence coefficients delta and eta.
    Influence,
    /// Extract innovations from paths and replay them.
    Govern,
    /// Priming experiment.
    Prime,
    /// Reconstruction bounds and successive approximation.
    Reconstruct,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Race => Command::Race,
            Cmd::Couple => Command::Couple,
            Cmd::PppCheck => Command::PppCheck,
            Cmd::Influence => Command::Influence,
            Cmd::Govern => Command::Govern,
            Cmd::Prime => Command::Prime,
            Cmd::Reconstruct => Command::Reconstruct,
        }
    }
}

const EXIT_VIOLATION: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_PARSE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let Some(seed) = cli.seed else {
        eprintln!("error: --seed is required");
        return ExitCode::from(EXIT_PARSE);
    };
    let command = Command::from(cli.command);
    let cfg = match ExperimentConfig::load(command, seed, cli.replicas, cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid configuration at {e}");
            return ExitCode::from(EXIT_PARSE);
        }
    };
    let outcome = match commands::run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error [{}]: {e}", command.module());
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    let (json, csv) = match output::write(&cli.out_dir, &cfg, &outcome) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error [output]: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    println!("{} {}", json.display(), csv.display());
    let violations = outcome.violations();
    if violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        for v in violations {
            eprintln!("violation: {} observed {} bound {}", v.name, v.observed, v.bound);
        }
        ExitCode::from(EXIT_VIOLATION)
    }
}
