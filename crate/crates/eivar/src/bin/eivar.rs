use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eivar::config::{cmd_replicate, cmd_run, cmd_schedule, exit_code};

#[derive(Parser)]
#[command(name = "eivar", about = "Sequential Bayesian experimental design for simulator calibration", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one experiment from a JSON config
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's out_dir)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed override
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every seed in replicate_seeds and aggregate MAD quantiles
    Replicate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent replicates
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Pure scheduler simulation from a duration table
    Schedule {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EIVAR_LOG", "error")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out, seed } => cmd_run(config, out.as_deref(), *seed),
        Command::Replicate { config, out, jobs } => cmd_replicate(config, out.as_deref(), *jobs),
        Command::Schedule { config, out } => cmd_schedule(config, out.as_deref()),
    };
    match result {
        Ok(dir) => {
            log::info!("outputs written to {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
