use std::process::ExitCode;

use clap::Parser;
use sumo_cli::cli::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command.resolve().and_then(|cfg| sumo_cli::execute(&cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
