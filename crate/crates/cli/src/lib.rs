//! `esc-lab`: configuration-driven experiments on the RMSprop extremum
//! seeking loop, with CSV trajectories and SVG plots as outputs.

pub mod config;
pub mod experiment;
pub mod output;
pub mod plot;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{ExperimentConfig, Mode, RawConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("{path}: {message}")]
    Data { path: String, message: String },
    #[error("run aborted: {0}")]
    Runtime(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    /// 2 for configuration and input problems, 3 for aborted runs, 1 for I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Parse { .. } | Self::Invalid { .. } | Self::Data { .. } => 2,
            Self::Runtime(_) => 3,
            Self::Io { .. } => 1,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }
}

/// Files written and lines worth printing.
#[derive(Debug, Default)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

/// Loads `config_path`, applies overrides, validates, and runs `mode` into
/// `out_dir`.
pub fn run_experiment(mode: Mode, config_path: &Path, overrides: &[String], out_dir: &Path) -> Result<RunSummary, CliError> {
    let mut raw = RawConfig::load(config_path)?;
    for assignment in overrides {
        raw.set(assignment)?;
    }
    let config = raw.resolve(mode)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    experiment::run(mode, &config, out_dir)
}
