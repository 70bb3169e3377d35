//! `nbb`: command-line front-end of the normal-bundle bootstrap.

mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use nbb_core::{NbbError, Result};

use args::{Cli, Command};

fn run(command: &Command) -> Result<()> {
    match command {
        Command::Gen(a) => commands::gen(a),
        Command::Bandwidth(a) => commands::bandwidth(a),
        Command::Ridge(a) => commands::ridge(a),
        Command::Nbb(a) => commands::nbb(a),
        Command::Confset(a) => commands::confset(a),
        Command::Coverage(a) => commands::coverage(a),
        Command::Augment(a) => commands::augment(a),
        Command::Dim(a) => commands::dim(a),
    }
}

fn fail(category: &str, message: &str, code: u8) -> ExitCode {
    let line = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error[{category}]: {line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NBB_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return fail("usage", first.trim_start_matches("error: "), 2);
        }
    };
    let threads = cli.command.common().threads;
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => return fail("usage", &format!("cannot start {threads} worker threads: {e}"), 2),
    };
    match pool.install(|| run(&cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if matches!(e, NbbError::InvalidParameter(_) | NbbError::KExceedsSampleSize { .. }) { 2 } else { 1 };
            fail(e.category(), &e.to_string(), code)
        }
    }
}
