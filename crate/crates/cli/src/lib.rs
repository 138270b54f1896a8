//! Command-line front end for the `arw-core` simulator.
//!
//! Exit codes: 0 on success, 1 on runtime failure (budget exhausted, failed
//! verification or check, I/O), 2 on usage errors.

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

pub mod args;
mod commands;
mod output;

use args::{Cli, Command};
use commands::Streams;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

/// Parses `argv` and runs the command, writing to the given streams.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{rendered}")
            } else {
                write!(stdout, "{rendered}")
            };
            return code;
        }
    };
    let mut streams = Streams {
        out: stdout,
        err: stderr,
    };
    let outcome = match cli.command {
        Command::Stabilize(a) => commands::stabilize(a, &mut streams),
        Command::AbelianCheck(a) => commands::abelian(a, &mut streams),
        Command::Tail(a) => commands::tail(a, &mut streams),
        Command::Curve(a) => commands::curve(a, &mut streams),
        Command::ZetaC(a) => commands::zeta_c(a, &mut streams),
        Command::OracleCheck(a) => commands::oracle_check(a, &mut streams),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(streams.err, "error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            let _ = writeln!(streams.err, "error: {e:#}");
            EXIT_FAILURE
        }
    }
}
