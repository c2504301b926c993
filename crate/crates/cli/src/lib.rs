//! Command-line front end for the tile-based rendering simulator.

pub mod app;
pub mod args;

use std::ffi::OsString;
use std::io::Write;

use clap::error::ErrorKind;
use clap::Parser;

pub use args::Cli;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_VERIFY: u8 = 2;

/// Parses `argv`, runs, and returns the process exit status.
pub fn main_with_args<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INPUT,
            };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match app::run(&cli, out) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_VERIFY,
        Err(e) => {
            let _ = writeln!(err, "tbrsim: {}", e.0);
            EXIT_INPUT
        }
    }
}
