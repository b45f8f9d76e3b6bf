//! Command surface for `detkit`: `eval`, `nms`, `mosaic`, `attn-check` and
//! `bench`.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for data errors and
//! failed checks.

pub mod args;
pub mod commands;

use std::path::PathBuf;

use thiserror::Error;

pub use args::{Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] detkit::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Runs one parsed command, writing its primary output to `out` and
/// warnings to `err`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> CliResult<()> {
    match cli.command {
        Command::Eval(a) => commands::eval(&a, out),
        Command::Nms(a) => commands::nms(&a, out, err),
        Command::Mosaic(a) => commands::mosaic(&a, out),
        Command::AttnCheck(a) => commands::attn_check(&a, out),
        Command::Bench(a) => commands::bench(&a, out),
    }
}
