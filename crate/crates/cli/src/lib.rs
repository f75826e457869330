//! Command-line front end for the relighting toolkit.

pub mod args;
pub mod commands;
pub mod error;

use std::ffi::OsString;

use clap::Parser;

pub use error::{CliError, CliResult};

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "RELIGHTKIT_THREADS";

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code: 0 ok, 1 usage error, 2 runtime error.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    if let Err(e) = configure_threads(cli.common.threads) {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    match commands::dispatch(&cli.common, cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads(flag: Option<usize>) -> CliResult<()> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse().map_err(|_| {
                CliError::Usage(format!(
                    "{THREADS_ENV} must be a positive integer, got {v:?}"
                ))
            })?),
            Err(_) => None,
        },
    };
    match threads {
        Some(0) => Err(CliError::Usage("thread count must be positive".into())),
        // The global pool can only be set once per process; later calls in
        // the same process keep the first setting.
        Some(n) => {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
            Ok(())
        }
        None => Ok(()),
    }
}
