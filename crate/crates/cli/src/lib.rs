//! `lenslabel` command line: calibrate band transforms, move labels between
//! bands, compose artificial RGB images and score the results.

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;
pub mod report;

use std::ffi::OsString;

use clap::Parser;

use args::{Cli, Command};
pub use error::CliError;

/// Runs one command and returns its stdout text.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Calibrate(a) => commands::calibrate::run(a),
        Command::Transfer(c) => commands::transfer::run(c),
        Command::ComposeRgb(c) => commands::compose::run_compose(c),
        Command::Backprop(a) => commands::compose::run_backprop(a),
        Command::Evaluate(a) => commands::evaluate::run(a),
        Command::Synth(a) => commands::synth::run(a),
    }
}

/// Parses `argv`, runs the command, prints its output and returns the
/// process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_target(false).try_init();
    match execute(&cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("lenslabel: {e}");
            e.exit_code()
        }
    }
}
