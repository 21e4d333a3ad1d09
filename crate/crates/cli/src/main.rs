//! `cotton-yield`: heat units, prep, synthetic data, training, evaluation
//! and prediction from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
//! Every failure prints a single diagnostic line to stderr.

mod args;
mod commands;
mod error;
mod manifest;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use error::{CliError, Kind};

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Ahu(a) => commands::ahu(a),
        Command::Prep(a) => commands::prep(a),
        Command::GenSynth(a) => commands::gen_synth(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
        Command::Predict(a) => commands::predict(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            // Fold clap's multi-line message into one line, minus the usage block.
            let rendered = e.render().to_string();
            let message = rendered
                .lines()
                .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .map(|l| l.trim())
                .filter(|l| !l.is_empty())
                .collect::<Vec<_>>()
                .join(" ");
            let message = message.strip_prefix("error: ").unwrap_or(&message);
            eprintln!("{} (see --help)", CliError::usage(message).line());
            return Kind::Usage.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            e.kind.exit_code()
        }
    }
}
