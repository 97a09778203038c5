use std::process::ExitCode;

use clap::Parser;
use modev::commands::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = cli.common.resolve().and_then(|cfg| run(&cli.command, &cfg));
    match result {
        Ok(checks) => {
            for name in &checks.passed {
                println!("PASS {name}");
            }
            for f in &checks.failures {
                eprintln!("FAIL {f}");
            }
            if checks.ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
