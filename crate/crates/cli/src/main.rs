use std::process::ExitCode;

use clap::Parser;
use timeweave_service::cli::{execute, Cli};

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    execute(Cli::parse())
}
