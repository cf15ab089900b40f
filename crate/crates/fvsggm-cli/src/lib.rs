//! Command-line front end for the `fvsggm` library.
//!
//! The binary is a thin shell over this crate: [`run`] parses arguments,
//! applies the `FVSGGM_THREADS` cap, dispatches to one subcommand, and
//! maps failures to stable exit codes (see [`error`]). File formats live
//! in [`csv_io`] and [`model_file`] so tests and downstream tools can
//! read and write them without spawning the binary.

use clap::Parser;

pub mod commands;
pub mod csv_io;
pub mod error;
pub mod model_file;

/// Parses the process arguments, runs the selected command, and returns
/// the process exit code.
pub fn run() -> i32 {
    // clap exits with code 2 on usage errors, matching the bad-input
    // class used below; --help and --version exit 0 inside parse().
    let cli = commands::Cli::parse();
    let result = commands::configure_threads().and_then(|()| commands::dispatch(cli.cmd));
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.kind.exit_code()
        }
    }
}
