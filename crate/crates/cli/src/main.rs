use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rampsim_cli::commands;
use rampsim_cli::config::RunConfig;
use rampsim_cli::CliError;

/// On-ramp traffic simulation: train social driver policies, run testing
/// scenarios against decision models, and score them.
#[derive(Parser)]
#[command(name = "rampsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the level-k curriculum (or a single stage).
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Train only this stage: car_following, level1_mutual,
        /// level2_mutual, competitive or cooperative.
        #[arg(long)]
        stage: Option<String>,
        /// Print the stage plan without training.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run a testing scenario and write the trajectory log.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Log output path (defaults into the configured out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of independently seeded runs.
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Fan the runs out over threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Score trajectory logs for intelligence and complexity.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Log file; repeat for a comparative table.
        #[arg(long = "log", required = true)]
        logs: Vec<PathBuf>,
        /// Weight override, e.g. `is=0.4,ie=0.3,ii=0.3`.
        #[arg(long)]
        weights: Option<String>,
    },
    /// Compare a simulation log against naturalistic tracks.
    Fidelity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        tracks: PathBuf,
    },
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train {
            config,
            stage,
            dry_run,
        } => {
            let config = RunConfig::load(&config)?;
            commands::cmd_train(&config, stage.as_deref(), dry_run)?;
        }
        Command::Simulate {
            config,
            out,
            seed,
            runs,
            parallel,
        } => {
            let config = RunConfig::load(&config)?;
            if runs == 0 {
                return Err(CliError::user("--runs must be at least 1"));
            }
            commands::cmd_simulate(&config, out, seed, runs, parallel)?;
        }
        Command::Evaluate {
            config,
            logs,
            weights,
        } => {
            let config = RunConfig::load(&config)?;
            commands::cmd_evaluate(&config, &logs, weights.as_deref())?;
        }
        Command::Fidelity {
            config,
            log,
            tracks,
        } => {
            let config = RunConfig::load(&config)?;
            commands::cmd_fidelity(&config, &log, &tracks)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
