//! Command-line front end: deterministic CSV datasets and the invariant
//! battery.

use std::io::Write;

use clap::{Args, Parser, Subcommand};
use photocount::StateSpec;

pub mod check;
pub mod commands;
pub mod output;
pub mod scenario;

use scenario::ScenarioArgs;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invariant failed: {0}")]
    Invariant(String),
    #[error(transparent)]
    Core(#[from] photocount::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 1 for failed invariants and numerical breakdowns, 2 for bad input.
    pub fn exit_code(&self) -> i32 {
        use photocount::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(
                E::InvalidParameter(_) | E::UnsupportedFamily(_) | E::UnsupportedOrder { .. },
            ) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "photocount",
    version,
    about = "Photocount statistics of the SD and EP detection models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Initial photon-number distribution: n, p_n
    Dist(ScenarioArgs),
    /// Count probabilities: gamma_t, k, P_sd, P_ep
    Counts(ScenarioArgs),
    /// Normalized mean photon number: state, nbar0, model, tau, nbar_over_nbar0
    Master(ScenarioArgs),
    /// Density of one ordered count sequence
    Epd(ScenarioArgs),
    /// Monte Carlo count histogram against the exact distribution
    Mc(ScenarioArgs),
    /// Run the invariant battery
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Print the invariant names and exit
    #[arg(long)]
    pub list: bool,
    /// Keep only this many Fock levels of the state
    #[arg(long)]
    pub truncation: Option<usize>,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
}

/// State used by `check` when none is given.
pub fn default_check_state() -> StateSpec {
    StateSpec::Thermal { nbar: 5.0 }
}

/// Execute a parsed command, writing human-readable output to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let (table, out) = match cli.command {
        Command::Dist(a) => dataset(a, commands::dist)?,
        Command::Counts(a) => dataset(a, commands::counts)?,
        Command::Master(a) => dataset(a, commands::master)?,
        Command::Epd(a) => dataset(a, commands::epd_cmd)?,
        Command::Mc(a) => dataset(a, commands::mc)?,
        Command::Check(c) => {
            if c.list {
                for name in check::INVARIANTS {
                    writeln!(stdout, "{name}")?;
                }
                return Ok(());
            }
            let a = c.scenario.merged()?;
            let spec = a.state_spec_or(Some(default_check_state()))?;
            let outcomes = check::run_checks(&spec, a.trunc_tol()?, c.truncation)?;
            write!(stdout, "{}", check::render(&outcomes))?;
            let failed = outcomes
                .iter()
                .filter(|o| !o.passed)
                .map(|o| o.name)
                .collect::<Vec<_>>();
            if failed.is_empty() {
                return Ok(());
            }
            return Err(CliError::Invariant(failed.join(", ")));
        }
    };
    match out {
        Some(path) => table.emit(Some(&path)),
        None => Ok(stdout.write_all(&table.to_bytes()?)?),
    }
}

fn dataset(
    a: ScenarioArgs,
    f: fn(&ScenarioArgs) -> Result<output::Table, CliError>,
) -> Result<(output::Table, Option<std::path::PathBuf>), CliError> {
    let a = a.merged()?;
    Ok((f(&a)?, a.out.clone()))
}
