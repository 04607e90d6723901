//! `ionphoton` command-line front end.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CliError, Context};
use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "ionphoton", version, about = "Ion-photon entanglement simulation, tomography and analysis")]
struct Cli {
    /// INI configuration file; nominal defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed, overriding `[run] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding `[run] out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Bootstrap resamples, overriding `[run] resamples`.
    #[arg(long, global = true)]
    resamples: Option<usize>,
    /// Detection-time bins, overriding `[run] bins`.
    #[arg(long, global = true)]
    bins: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo run over all 18 basis settings: event log and count table.
    Simulate,
    /// Maximum-likelihood density matrix from a count table.
    Reconstruct {
        counts: PathBuf,
    },
    /// Witnesses with bootstrap errors, and per-time-bin phases when an
    /// event log is given.
    Analyze {
        counts: PathBuf,
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Tomography at each configured Raman phase plus the sinusoid fit.
    SweepPhase,
    /// Tomography at each configured target amplitude.
    SweepAmplitude,
    /// Emission pulse per polarization as two-column tables.
    PulseShape,
    /// Efficiency budget table.
    Budget,
}

fn context(cli: &Cli) -> Result<Context, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.run.seed = Some(seed);
    }
    if let Some(r) = cli.resamples {
        config.run.resamples = r;
    }
    if let Some(b) = cli.bins {
        if b == 0 {
            return Err(CliError::Usage("--bins must be at least 1".into()));
        }
        config.run.bins = b;
    }
    let out = cli.out.clone().unwrap_or_else(|| config.run.out.clone());
    Ok(Context { config, out })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = context(&cli)?;
    match &cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Reconstruct { counts } => commands::reconstruct(&ctx, counts),
        Command::Analyze { counts, events } => commands::analyze(&ctx, counts, events.as_deref()),
        Command::SweepPhase => commands::sweep_phase(&ctx),
        Command::SweepAmplitude => commands::sweep_amplitude(&ctx),
        Command::PulseShape => commands::pulse_shape(&ctx),
        Command::Budget => commands::budget(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
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
