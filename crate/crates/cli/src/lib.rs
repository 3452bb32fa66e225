//! Command-line front end: `rank`, `evaluate`, `synth` and `report`.

pub mod args;
mod commands;

use std::process::ExitCode;

pub use args::{Cli, Command};
pub use commands::{cmd_evaluate, cmd_rank, cmd_report, cmd_synth, synthetic_corpus};

/// Failures split by exit status: bad input or flags versus a run in which
/// some scenes could not be processed.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0:#}")]
    Config(anyhow::Error),
    #[error("{0:#}")]
    Run(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

/// What a successful command did; `failed` scenes make the exit status 1.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Outcome {
    pub processed: usize,
    pub failed: usize,
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        u8::from(self.failed > 0)
    }
}

pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Rank(a) => cmd_rank(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Report(a) => cmd_report(&a),
    };
    match result {
        Ok(outcome) => ExitCode::from(outcome.exit_code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
