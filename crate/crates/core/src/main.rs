use std::process::ExitCode;

use clap::Parser;
use movex::cli::{execute, Cli};

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("movex: {e:#}");
            ExitCode::FAILURE
        }
    }
}
