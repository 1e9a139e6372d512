//! Command-line front end and HTTP service.

pub mod cli;
pub mod error;
pub mod service;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

pub use cli::{Cli, Command};
pub use error::CliError;
pub use service::{router, Session};

/// Parses `args`, runs the command and maps failures to exit codes:
/// 2 for usage errors, 1 for data errors. Failures are reported as one
/// JSON record on stderr.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.record());
            return err.exit_code();
        }
    };
    match cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.record());
            err.exit_code()
        }
    }
}
