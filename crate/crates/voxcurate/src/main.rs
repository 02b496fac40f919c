use std::process::ExitCode;

use clap::Parser;
use voxcurate::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("voxcurate: {e}");
            e.to_exit()
        }
    }
}
