use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use commands::{Direction, Run};
use config::RunConfig;

/// Single-photon absorption, storage and emission by a quantum dot in a
/// waveguide-coupled cavity.
#[derive(Parser)]
#[command(name = "qdc", version)]
struct Cli {
    /// Run configuration (TOML). Without it every default applies.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for `sweep`; default is one per core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Accepted for compatibility. Nothing here draws random numbers, so
    /// every run is already deterministic.
    #[arg(long, global = true)]
    seedless: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gaussian pulse into the empty system.
    Absorb,
    /// Spontaneous emission from the excited dot.
    Emit,
    /// Absorb, detune to hold, return to resonance to release.
    StoreRelease,
    /// Emission under a detuning ramp tuned for a Gaussian envelope.
    Shape,
    /// Maximum dot population over a (kappa, w) grid.
    Sweep,
    /// Converts between an energy in ueV and the time hbar / E in ps.
    ConvertUnits {
        value: f64,
        #[arg(value_enum, default_value = "uev-to-ps")]
        direction: Direction,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Command::ConvertUnits { value, direction } = cli.command {
        println!("{}", commands::convert_units(value, direction)?);
        return Ok(());
    }
    if cli.workers == Some(0) {
        anyhow::bail!("--workers must be >= 1");
    }
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let name = match cli.command {
        Command::Absorb => "absorb",
        Command::Emit => "emit",
        Command::StoreRelease => "store-release",
        Command::Shape => "shape",
        Command::Sweep => "sweep",
        Command::ConvertUnits { .. } => unreachable!(),
    };
    let run = Run::new(name, config, cli.out.as_deref(), cli.workers)?;
    match cli.command {
        Command::Absorb => commands::absorb(run),
        Command::Emit => commands::emit(run),
        Command::StoreRelease => commands::store_release(run),
        Command::Shape => commands::shape(run),
        Command::Sweep => commands::sweep(run),
        Command::ConvertUnits { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
