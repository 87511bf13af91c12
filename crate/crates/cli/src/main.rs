//! spreadlearn: corrupt / estimate / train / eval / analyze / experiment
//! over the spread-likelihood library. Thin adapters only; all numerics
//! live in the library crate.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
//! Diagnostics go to stderr; machine-readable output goes to files or
//! stdout.

mod commands;
mod model_file;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgAction, Parser, Subcommand};

use spreadlearn::error::Error;

#[derive(Parser)]
#[command(name = "spreadlearn", version, about = "Private learning from randomised-response data")]
struct Cli {
    /// Increase diagnostic chatter on stderr.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Release a corrupted copy of a dataset through configured channels.
    Corrupt(commands::CorruptArgs),
    /// Spread-MLE of a clean state distribution from corrupted counts.
    Estimate(commands::EstimateArgs),
    /// Train logistic regression on (possibly corrupted) data.
    Train(commands::TrainArgs),
    /// Evaluate a trained model on clean data.
    Eval(commands::EvalArgs),
    /// Baseline analyses: reconstruction curves and the flipped-label
    /// gradient/Hessian diagnostics.
    #[command(subcommand)]
    Analyze(commands::AnalyzeCmd),
    /// Run a config-driven experiment sweep.
    Experiment(commands::ExperimentArgs),
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("SPREADLEARN_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                // Ignore failure: the global pool may already exist in tests.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("warning: SPREADLEARN_THREADS={threads} is not a positive integer; ignored");
            }
        }
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{err}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{err}");
                    ExitCode::from(1)
                }
            };
        }
    };
    let verbose = cli.verbose;
    let result = match cli.command {
        Command::Corrupt(args) => commands::run_corrupt(args, verbose),
        Command::Estimate(args) => commands::run_estimate(args, verbose),
        Command::Train(args) => commands::run_train(args, verbose),
        Command::Eval(args) => commands::run_eval(args, verbose),
        Command::Analyze(cmd) => commands::run_analyze(cmd, verbose),
        Command::Experiment(args) => commands::run_experiment_cmd(args, verbose),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Numerical(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
