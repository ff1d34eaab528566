mod commands;
mod config;
mod csvio;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use hfu_core::Error;
use serde::Serialize;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_COMPUTE: u8 = 3;

#[derive(Debug, Serialize)]
pub struct CliError {
    pub error: String,
    pub message: String,
    pub exit_code: u8,
}

impl CliError {
    pub fn config(kind: &str, message: String) -> Self {
        Self { error: kind.into(), message, exit_code: EXIT_CONFIG }
    }

    pub fn compute(kind: &str, message: String) -> Self {
        Self { error: kind.into(), message, exit_code: EXIT_COMPUTE }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::VolVanished { .. }
            | Error::NonFinite { .. }
            | Error::NonConvergent { .. }
            | Error::DegenerateDenominator(_)
            | Error::TooFewSamples { .. } => EXIT_COMPUTE,
            _ => EXIT_CONFIG,
        };
        Self { error: e.kind().into(), message: e.to_string(), exit_code: code }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("HFU_THREADS") else {
        return Ok(());
    };
    let threads: usize = match v.trim().parse() {
        Ok(k) if k > 0 => k,
        _ => return Err(CliError::config("Config", format!("HFU_THREADS must be a positive integer, got `{v}`"))),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::config("Config", e.to_string()))
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("{}", serde_json::to_string(&e).expect("error serializes"));
    ExitCode::from(e.exit_code)
}

fn main() -> ExitCode {
    let cli = match config::Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(CliError::config("Usage", e.render().to_string().trim().to_string())),
    };
    if let Err(e) = configure_threads() {
        return fail(e);
    }
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
