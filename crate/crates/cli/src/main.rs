mod commands;
mod options;
mod report;

use std::process::ExitCode;

use clap::Parser;
use pce_core::Error;

use options::{Cli, Command};

/// Failure classes, one per exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("estimation error: {0}")]
    Estimation(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Estimation(_) => 3,
            CliError::Config(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Csv { .. } | Error::InvalidData(_) | Error::ZeroVariance(_) | Error::Io(_) | Error::Json(_) => {
                CliError::Input(msg)
            }
            Error::Config(m) => CliError::Config(m),
            _ => CliError::Estimation(msg),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("configuration error: --threads must be positive");
            return ExitCode::from(4);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .expect("thread pool is configured once");
    }
    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Surface(a) => commands::surface(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Study(a) => commands::study(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
