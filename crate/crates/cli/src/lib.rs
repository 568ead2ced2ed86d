//! Command-line batch harness over the spiking-encoding core.
//!
//! Exit codes: 0 success, 1 assertion or verification failure, 2 usage or
//! configuration error. Primary outputs (tables, CSV, JSONL) are
//! deterministic given flags and seeds; progress notes go to stderr.

use clap::{Parser, Subcommand};
use snncodec_core::Error;

pub mod commands;
pub mod config;

#[derive(Debug, Parser)]
#[command(name = "snncodec", version, about = "Spiking-network encoding laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact firing-pattern table for constant LIF input.
    Oracle(commands::oracle::OracleArgs),
    /// Encode a feature tensor and dump the spike train as CSV.
    Encode(commands::encode::EncodeArgs),
    /// Train a model from a run configuration.
    Train(commands::train::TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(commands::eval::EvalArgs),
    /// Run the toggle-ladder ablation grid.
    Ablate(commands::ablate::AblateArgs),
    /// Compare accuracy before and after temporal shuffling.
    ShuffleEval(commands::shuffle::ShuffleArgs),
}

/// Dispatch a parsed command; returns the process exit code.
pub fn run(cli: &Cli) -> snncodec_core::Result<i32> {
    match &cli.command {
        Command::Oracle(args) => commands::oracle::run(args),
        Command::Encode(args) => commands::encode::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Ablate(args) => commands::ablate::run(args),
        Command::ShuffleEval(args) => commands::shuffle::run(args),
    }
}

/// Exit code for an error: bad input or configuration is 2, everything
/// else (mid-run assertion failures) is 1.
pub fn exit_code_for(error: &Error) -> i32 {
    match error {
        Error::Config(_) | Error::Format(_) | Error::Contract(_) | Error::Io(_) => 2,
        _ => 1,
    }
}
