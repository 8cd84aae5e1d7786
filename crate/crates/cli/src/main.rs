use std::process::ExitCode;

use clap::Parser;
use exifgmm_cli::commands::parse_threads;
use exifgmm_cli::{run, Cli, CliError};

/// Sizes the worker pool from `EXIFGMM_THREADS` when it is set.
fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("EXIFGMM_THREADS") else {
        return Ok(());
    };
    let n = parse_threads(&value)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
