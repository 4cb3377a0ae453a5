//! Command-line front end: argument parsing, configuration files and the
//! `train`, `solve-ot`, `ablate`, `diagnose` and `gen-synth` commands.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;

use clap::Parser;
use gwib::par;

pub use args::Cli;
use args::Command;
use error::{CliError, CliResult};

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "GWIB_THREADS";

fn thread_cap() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::input(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Train(a) => commands::cmd_train(a).map(drop),
        Command::SolveOt(a) => commands::cmd_solve_ot(a).map(drop),
        Command::Ablate(a) => {
            for r in commands::cmd_ablate(a)? {
                println!("{:<9} {:<14} {:<10} {:.6} ± {:.6}", r.variant, r.metric, r.scope, r.mean, r.std);
            }
            Ok(())
        }
        Command::Diagnose(a) => commands::cmd_diagnose(a).map(drop),
        Command::GenSynth(a) => commands::cmd_gen_synth(a).map(drop),
    }
}

/// Parse `args` (program name first), run the command and return its exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = thread_cap().and_then(|cap| match cap {
        Some(n) => par::with_threads(n, || dispatch(&cli)),
        None => dispatch(&cli),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("gwib: {e}");
            e.exit_code()
        }
    }
}
