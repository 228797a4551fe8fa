//! `llmconf`: database tooling, estimation, search and launch files.
//!
//! Machine-readable output goes to stdout or `--out`; logs and summaries go
//! to stderr. Exit status is 0 on success, 1 on a domain error and 2 on a
//! usage error.

mod args;
mod commands;
mod overrides;

use std::fmt;
use std::io::IsTerminal;
use std::process::ExitCode;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use args::{Cli, Command};

/// Invocation mistake not caught by argument parsing; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = EnvFilter::try_new(&cli.log).unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();

    let result = match cli.command {
        Command::Dbgen(a) => commands::dbgen(a),
        Command::Dbcheck(a) => commands::dbcheck(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Search(a) => commands::search(a),
        Command::Generate(a) => commands::generate(a),
        Command::Serve(a) => commands::serve(a),
        Command::Export(a) => commands::export(a),
        Command::MoeLoad(a) => commands::moe_load(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
