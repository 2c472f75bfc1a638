use std::io;
use std::path::{Path, PathBuf};

use smer_core::model::ModelError;
use smer_core::train::TrainError;

/// Process exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Bad arguments, config, manifest or labels.
pub const EXIT_VALIDATION: i32 = 1;
/// IO failures, corrupt files, failed training.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Validation(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{what} not found: expected {}", path.display())]
    Missing { what: &'static str, path: PathBuf },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Runtime(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_)
            | Error::Model(ModelError::InvalidConfig(_))
            | Error::Train(TrainError::InvalidConfig(_) | TrainError::Model(ModelError::InvalidConfig(_))) => EXIT_VALIDATION,
            _ => EXIT_RUNTIME,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
        move |source| {
            if source.kind() == io::ErrorKind::NotFound {
                Error::Missing { what: "file", path: path.to_path_buf() }
            } else {
                Error::Io { path: path.to_path_buf(), source }
            }
        }
    }

    pub fn format(path: &Path, msg: impl ToString) -> Error {
        Error::Format { path: path.to_path_buf(), msg: msg.to_string() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(Error::io(path))
}

pub(crate) fn read_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(Error::io(path))
}

/// Writes via a sibling temporary file and a rename, creating parent
/// directories as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(Error::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(Error::io(path))
}
