use std::process::ExitCode;

use clap::Parser;
use margattn_cli::args::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match margattn_cli::run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
