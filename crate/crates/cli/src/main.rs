//! `ribpoint` command-line tool.

mod commands;
mod io;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use commands::Cli;

/// Exit status for bad flags or missing inputs.
pub const EXIT_USAGE: u8 = 2;
/// Exit status for failures while processing.
pub const EXIT_FAILURE: u8 = 1;

/// A failure with the exit status it maps to.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(ribpoint::Error),
}

impl From<ribpoint::Error> for CliError {
    fn from(e: ribpoint::Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    fn record(&self, command: &str) -> serde_json::Value {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage", m.clone()),
            CliError::Run(e) => (e.kind(), e.to_string()),
        };
        serde_json::json!({ "error": { "command": command, "kind": kind, "message": message } })
    }

    fn status(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(_) => EXIT_FAILURE,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RIBPOINT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.record(""));
            return ExitCode::from(err.status());
        }
    };
    let name = cli.command.name();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record(name));
            ExitCode::from(e.status())
        }
    }
}
