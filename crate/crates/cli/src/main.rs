mod commands;
mod manifest;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use kacl::Error;

/// Knowledge-aware classification pipeline: build label consistency
/// matrices from a concept graph, train coupled classifiers, and score
/// their rankings.
#[derive(Parser)]
#[command(name = "kacl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a label-label consistency matrix from a concept edge list.
    Consistency(commands::ConsistencyArgs),
    /// Train a classifier on features, labels and a consistency matrix.
    Train(commands::TrainArgs),
    /// Score a checkpoint against a labeled dataset.
    Eval(commands::EvalArgs),
    /// Time the sparse and pairwise penalty routes across matrix sizes.
    BenchReg(commands::BenchArgs),
    /// Generate a synthetic dataset with planted label correlations.
    Synth(commands::SynthArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Consistency(args) => commands::consistency(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::BenchReg(args) => commands::bench_reg(args),
        Command::Synth(args) => commands::synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kacl: {e}");
            match e {
                Error::Numerical(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
