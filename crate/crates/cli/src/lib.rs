//! Command implementations behind the `probe` binary.

pub mod archive;
pub mod commands;
pub mod manifest;
pub mod report;
pub mod svg;

use std::path::{Path, PathBuf};

use rankprobe::trainer::TrainError;
use thiserror::Error;

pub use archive::{ArchiveError, Entry, TensorArchive, TensorData};
pub use manifest::{ExperimentManifest, Overrides};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("training failed: {0}")]
    Train(TrainError),
    #[error("cannot read archive {path}: {source}")]
    Archive {
        path: PathBuf,
        #[source]
        source: ArchiveError,
    },
    #[error("no probe-able tensors: {0}")]
    NothingToProbe(String),
    #[error("malformed table: {0}")]
    Table(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Diverged { .. } => 3,
            CliError::Archive { .. } => 4,
            CliError::NothingToProbe(_) => 5,
            CliError::Table(_) => 6,
            CliError::Train(_) | CliError::Io { .. } => 1,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::DivergedTraining { epoch } => CliError::Diverged { epoch },
            TrainError::InvalidSpec(_)
            | TrainError::InvalidConfig { .. }
            | TrainError::InputMismatch { .. }
            | TrainError::Dataset(_) => CliError::Config(e.to_string()),
            other => CliError::Train(other),
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| CliError::Io {
        path: path.to_owned(),
        source: e.error,
    })?;
    Ok(())
}
