mod args;
mod commands;
mod manifest;

use std::io::IsTerminal;
use std::process::ExitCode;

use clap::Parser;
use reelcrowd_core::Error;
use tracing_subscriber::EnvFilter;

/// 2 validation, 3 gateway or transport, 4 budget, 5 internal.
fn exit_code(error: &Error) -> u8 {
    match error.root() {
        Error::Input(_)
        | Error::NotFound(_)
        | Error::Conflict(_)
        | Error::Config(_)
        | Error::StaleIndex { .. } => 2,
        Error::Transport { .. } | Error::Parse { .. } | Error::Generation(_) => 3,
        Error::Budget { .. } => 4,
        _ => 5,
    }
}

fn main() -> ExitCode {
    let cli = args::Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(5);
        }
    };
    match runtime.block_on(commands::dispatch(cli.global, cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
