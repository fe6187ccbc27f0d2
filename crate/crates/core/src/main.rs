//! Binary entry point: thread-pool setup, argument parsing, dispatch.

use std::process::ExitCode;

use clap::Parser;

use dvars::cli::{Cli, Command};

fn main() -> ExitCode {
    // Worker count is a cap, never part of the math: results are identical
    // for any setting.
    if let Ok(raw) = std::env::var("DVARS_THREADS") {
        match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("dvars: warning: ignoring DVARS_THREADS='{raw}' (want a positive integer)"),
        }
    }

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version are successful outcomes; real parse errors are not.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    let outcome = match &cli.command {
        Command::Compute(args) => dvars::cli::run_compute(args),
        Command::Simulate(args) => dvars::cli::run_simulate(args),
        Command::Selftest(args) => dvars::cli::run_selftest_cmd(args),
    };

    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("dvars: {err}");
            ExitCode::from(1)
        }
    }
}
