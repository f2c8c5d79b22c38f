//! Command implementations behind the `sdie` binary. Each command is a plain
//! function so tests can drive it without spawning a process.

pub mod bench;
pub mod config;
pub mod pipeline;

use std::path::Path;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numeric(String),
    #[error("property battery failed: {0}")]
    Battery(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Battery(_) => 3,
        }
    }
}

impl From<sdie::Error> for CliError {
    fn from(e: sdie::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(format!("csv: {e}"))
    }
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Input(format!("cannot create output directory {}: {e}", dir.display())))
}

/// Parses a comma-separated list such as `4,8,16`.
pub fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse().map_err(|_| CliError::Input(format!("{what}: cannot parse '{t}'"))))
        .collect()
}
