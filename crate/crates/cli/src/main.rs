use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coexist::config::Mode;
use coexist::run::run_file;

/// Penalized-energy solver for competing species on dumbbell domains.
#[derive(Parser)]
#[command(name = "coexist", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize independently at every rate of the schedule.
    Solve(RunArgs),
    /// Follow the minimizer along the schedule, warm-starting each stage.
    Continuation(RunArgs),
    /// Repeat the continuation for every channel width in `sweep`.
    Sweep(RunArgs),
    /// Validate the configuration and run the preflight checks only.
    Check(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the configuration.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COEXIST_LOG", "info")).init();
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Solve(a) => (Mode::Solve, a),
        Command::Continuation(a) => (Mode::Continuation, a),
        Command::Sweep(a) => (Mode::Sweep, a),
        Command::Check(a) => (Mode::Check, a),
    };
    match run_file(&args.config, Some(mode), args.output.as_deref(), args.workers) {
        Ok(report) => match report.first_failure() {
            None => ExitCode::SUCCESS,
            Some(name) => {
                log::error!("hard assertion failed: {name}");
                eprintln!("failed: {name}");
                ExitCode::from(report.exit_code() as u8)
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
