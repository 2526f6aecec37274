//! `nsl`: synthetic data, training, prediction and cross-validated
//! evaluation of per-gene stain-learning models, plus the least-squares
//! baseline and method comparison tables.
//!
//! Exit codes: 0 success, 1 invalid flags or configuration, 2 unreadable or
//! inconsistent input data, 3 numeric failure (divergence, unevaluable genes).

mod args;
mod commands;
mod error;
mod pipeline;
mod run_manifest;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::{baseline, eval, predict, report, synth, train};

#[derive(Debug, Parser)]
#[command(
    name = "nsl",
    version,
    about = "Gene expression from stained tissue with learned stain deconvolution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset from known per-gene models.
    Synth(synth::SynthArgs),
    /// Train one model per gene on every spot.
    Train(train::TrainArgs),
    /// Predict log-scale expression with a trained bundle.
    Predict(predict::PredictArgs),
    /// Leave-one-patient-out evaluation of the stain-learning model.
    Eval(eval::EvalArgs),
    /// Leave-one-patient-out evaluation of least squares on spot features.
    Baseline(baseline::BaselineArgs),
    /// Compare reports of several methods side by side.
    Report(report::ReportArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Predict(a) => predict::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Baseline(a) => baseline::run(a),
        Command::Report(a) => report::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
