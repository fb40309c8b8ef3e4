//! Command-line front end: synthetic data, training, forecasting,
//! evaluation, head/motion analysis and gradient checks.
//!
//! Exit codes: 0 success, 2 usage, 3 parse (data, config or checkpoint),
//! 4 validation, 5 training divergence, 6 gradient check failure, 7 I/O.

pub mod args;
pub mod commands;
pub mod config;

pub use args::{run, Cli};
pub use config::RunConfig;

use thiserror::Error;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;
pub const EXIT_DIVERGENCE: i32 = 5;
pub const EXIT_GRADCHECK: i32 = 6;
pub const EXIT_IO: i32 = 7;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mxcast::Error),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("gradient check failed:\n{0}")]
    Gradcheck(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use mxcast::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config { .. } => EXIT_PARSE,
            CliError::Gradcheck(_) => EXIT_GRADCHECK,
            CliError::Io(_) => EXIT_IO,
            CliError::Core(e) => match e {
                E::Parse { .. } | E::Checkpoint(_) => EXIT_PARSE,
                E::Divergence { .. } => EXIT_DIVERGENCE,
                E::Io(_) => EXIT_IO,
                _ => EXIT_VALIDATION,
            },
        }
    }
}
