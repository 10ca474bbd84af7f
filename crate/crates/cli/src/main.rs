//! `apr`: simulate agents on the active probabilistic reasoning task, run
//! language models against it, fit the mechanistic model and report.
//!
//! Exit codes: 0 success, 1 usage, 2 data/schema, 3 numeric failure.

mod agent;
mod cmd;
mod config;
mod error;
mod manifest;

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::error::{CliError, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "apr", version, about = "Active probabilistic reasoning workbench")]
struct Cli {
    /// Caps worker threads for all parallel work.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the mechanistic model or a reference agent.
    Simulate(cmd::simulate::SimulateArgs),
    /// Solve the exact DP sampler and write its tables.
    SolveDp(cmd::dp::SolveDpArgs),
    /// Train a PPO sampler.
    TrainPpo(cmd::ppo::TrainPpoArgs),
    /// Play games against a chat-completions endpoint.
    RunLlm(cmd::llm::RunLlmArgs),
    /// Fit the mechanistic model to trajectories.
    Fit(cmd::fit::FitArgs),
    /// Success rates and loss decomposition per agent.
    Metrics(cmd::metrics::MetricsArgs),
    /// Plot data from metrics and fit results.
    Report(cmd::report::ReportArgs),
    /// Serve the session web API.
    Serve(cmd::serve::ServeArgs),
    /// Repeat a run from its manifest.
    Rerun {
        manifest: PathBuf,
    },
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(a) => cmd::simulate::run(&cmd::simulate::resolve(&a)?),
        Command::SolveDp(a) => cmd::dp::run(&cmd::dp::resolve(&a)?),
        Command::TrainPpo(a) => cmd::ppo::run(&cmd::ppo::resolve(&a)?),
        Command::RunLlm(a) => cmd::llm::run(&cmd::llm::resolve(&a)?),
        Command::Fit(a) => cmd::fit::run(&cmd::fit::resolve(&a)?),
        Command::Metrics(a) => cmd::metrics::run(&cmd::metrics::resolve(&a)?),
        Command::Report(a) => cmd::report::run(&cmd::report::resolve(&a)?),
        Command::Serve(a) => cmd::serve::run(&cmd::serve::resolve(&a)?),
        Command::Rerun { manifest } => cmd::rerun(&manifest),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
