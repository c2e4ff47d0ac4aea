use std::path::{Path, PathBuf};

use ionspec::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Failure tied to a particular input file.
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Error,
    },
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn in_file(path: &Path, source: Error) -> Self {
        CliError::File {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn core(&self) -> &Error {
        match self {
            CliError::File { source, .. } | CliError::Core(source) => source,
        }
    }

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> u8 {
        match self.core() {
            Error::Io(_) => 3,
            Error::Parse { .. } => 4,
            Error::Invalid(_) | Error::Domain(_) | Error::Inconsistent(_) => 5,
            Error::Fit(_) => 6,
            Error::Structure(_)
            | Error::DegenerateSteadyState { .. }
            | Error::Unreachable { .. } => 7,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::in_file(path, e.into()))
}

/// Runs `f` on the text of `path`, tagging any error with the path.
pub fn parse_file<T>(path: &Path, f: impl FnOnce(&str) -> ionspec::Result<T>) -> CliResult<T> {
    let text = read_file(path)?;
    f(&text).map_err(|e| CliError::in_file(path, e))
}
