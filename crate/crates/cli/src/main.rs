use std::process::ExitCode;

use clap::Parser;
use stemreg_cli::{run, Cli, ErrorRecord, FATAL_EXIT};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => ExitCode::from(outcome.code()),
        Err(err) => {
            let record = ErrorRecord::new(&err);
            eprintln!("{}", serde_json::to_string(&record).unwrap_or_else(|_| format!("{err:#}")));
            ExitCode::from(FATAL_EXIT)
        }
    }
}
