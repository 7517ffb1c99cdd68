//! Experiment runner for the elliptical attention library.
//!
//! Every subcommand is a pure function of its resolved configuration: the
//! same config produces byte-identical files in the output directory.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use commands::{run, Command, Outcome};
pub use config::RunConfig;

/// Environment variable naming the directory under which runs are written.
pub const OUT_ROOT_ENV: &str = "ELLIPTICAL_OUT_ROOT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Core(#[from] elliptical::Error),
}

impl CliError {
    pub fn file(path: &Path, source: std::io::Error) -> Self {
        CliError::File { path: path.to_path_buf(), source }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

/// Output directory: `explicit` if given, else `$ELLIPTICAL_OUT_ROOT/<command>`
/// with `runs` as the default root.
pub fn output_dir(explicit: Option<&Path>, command: Command) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let root = std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
            root.join(command.name())
        }
    }
}
