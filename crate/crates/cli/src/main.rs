mod args;
mod commands;
mod config;
mod output;
mod tables;

use std::io::ErrorKind;
use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::config::Resolver;

/// Exit status for a missing input file.
const EXIT_MISSING_INPUT: u8 = 2;

fn missing_input(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| match cause.downcast_ref::<usage_anomaly::Error>() {
        Some(usage_anomaly::Error::Io { source, .. }) => source.kind() == ErrorKind::NotFound,
        _ => false,
    })
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let resolver = Resolver::from_path(cli.config.as_deref())?.print_only(cli.print_config);
    match &cli.command {
        Command::Detect(a) => commands::detect(a, resolver),
        Command::Rank(a) => commands::rank(a, resolver),
        Command::Inject(a) => commands::inject(a, resolver),
        Command::Evaluate(a) => commands::evaluate(a, resolver),
        Command::Fetch(a) => commands::fetch(a, resolver),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if missing_input(&err) {
                ExitCode::from(EXIT_MISSING_INPUT)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
