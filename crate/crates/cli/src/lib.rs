//! Command line and HTTP service for the saeir toolkit.

pub mod cli;
pub mod clients;
pub mod data;
pub mod service;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;

/// Parses `args` and runs the command. Returns 0 on success, 1 on a usage
/// error and 2 when the command itself fails.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match cli::Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match cli::execute(parsed) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            2
        }
    }
}

/// Joins the causes of `e`, skipping any that its parent already printed.
fn error_chain(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let s = cause.to_string();
        if parts.last().is_none_or(|p| !p.ends_with(&s)) {
            parts.push(s);
        }
    }
    parts.join(": ")
}
