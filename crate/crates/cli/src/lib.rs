//! The `fairlex` command line.
//!
//! Exit status: 0 on success, 1 when the input or flags are invalid, 2 when
//! the work itself fails.

pub mod annotate;
mod commands;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::Parser;

pub use commands::Cli;

/// An error in the command line itself, reported with exit status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Exit status for a failed command.
pub fn exit_status(error: &anyhow::Error) -> u8 {
    for cause in error.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<fairlex::Error>() {
            return match e {
                // a missing input file is a bad argument, not a failed run
                fairlex::Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 1,
                e if e.is_validation() => 1,
                _ => 2,
            };
        }
    }
    2
}

/// Parses `args` and runs the command.
pub fn dispatch<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
