//! `iterdre` command-line driver.
//!
//! Every subcommand reads an optional JSON config whose keys are the long
//! flag names with `-` replaced by `_`; flags given on the command line win.
//! Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or
//! configuration failure.

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Failure class deciding the exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn usage(msg: impl std::fmt::Display) -> Self {
        CliError::Usage(anyhow::anyhow!("{msg}"))
    }
}

impl From<iterdre::Error> for CliError {
    fn from(e: iterdre::Error) -> Self {
        use iterdre::Error as E;
        match e {
            E::InvalidConfig(_)
            | E::Construction { .. }
            | E::Parse { .. }
            | E::Format(_)
            | E::InvalidInput(_)
            | E::UnsupportedOrder(_)
            | E::Json(_)
            | E::Csv(_)
            | E::Io(_) => CliError::Usage(e.into()),
            _ => CliError::Runtime(e.into()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not configure the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let outcome = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Benchmark(a) => commands::benchmark(a),
        Command::RateStudy(a) => commands::rate_study(a),
        Command::Saturation(a) => commands::saturation(a),
        Command::Ensemble(a) => commands::ensemble(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
