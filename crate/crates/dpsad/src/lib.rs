//! File formats, run configuration and command implementations for the
//! `dpsad` tool.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod manifest;

use std::path::Path;

use sha2::{Digest, Sha256};

/// Failure of a command, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, config, or input files.
    #[error("{0}")]
    Usage(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("privacy budget cannot be met: {0}")]
    Infeasible(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::Usage(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Training(_) => 3,
            Self::Infeasible(_) => 4,
        }
    }
}

impl From<dpsad_core::Error> for CliError {
    fn from(e: dpsad_core::Error) -> Self {
        use dpsad_core::Error;
        match e {
            Error::InvalidArgument(m) => Self::Usage(m),
            Error::TrainingFailure(m) => Self::Training(m),
            Error::Infeasible(m) => Self::Infeasible(m),
            e @ Error::BudgetExceeded { .. } => Self::Infeasible(e.to_string()),
        }
    }
}

/// Write through a sibling temp file so readers never see a partial file.
pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| CliError::io(path, e))?))
}
