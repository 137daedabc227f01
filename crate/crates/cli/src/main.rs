mod commands;
mod config;
mod error;

use std::io::Write;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use crate::config::{resolve, Cli};
use crate::error::CliError;

const THREADS_ENV: &str = "RENEGE_LDP_THREADS";

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&k| k > 0)
        .ok_or_else(|| CliError::config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::config(e.to_string()))
}

fn execute() -> Result<Vec<u8>, CliError> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            std::process::exit(0);
        }
        Err(e) => return Err(CliError::config(e.to_string().trim_end())),
    };
    configure_threads()?;
    let (kind, flags) = cli.command.split();
    let options = commands::with_defaults(kind, resolve(kind, flags)?);
    commands::run(kind, options)
}

fn main() -> ExitCode {
    match execute() {
        Ok(summary) => {
            let _ = std::io::stdout().write_all(&summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            let text = serde_json::to_string(&e).unwrap_or_else(|_| format!("{{\"message\":{:?}}}", e.message));
            eprintln!("{text}");
            ExitCode::from(e.exit_code as u8)
        }
    }
}
