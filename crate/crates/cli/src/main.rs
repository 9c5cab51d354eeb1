mod args;
mod commands;
mod manifest;

use std::fmt;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

/// Failure of one command, carrying its exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(hamloc::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(hamloc::Error::Format { .. }) => "format",
            CliError::Core(hamloc::Error::NonFinite { .. }) => "numeric",
            CliError::Core(hamloc::Error::Io { .. }) => "io",
            CliError::Core(_) => "config",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(hamloc::Error::Format { .. }) => 2,
            CliError::Core(hamloc::Error::NonFinite { .. }) => 3,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<hamloc::Error> for CliError {
    fn from(e: hamloc::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("hamloc: error[{}]: {}", e.kind(), one_line(&e.to_string()));
    ExitCode::from(e.exit_code())
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("HAMLOC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("HAMLOC_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::usage(e.to_string().replace("error: ", ""))),
    };
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Localize(a) => commands::localize(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Report(a) => commands::report(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
