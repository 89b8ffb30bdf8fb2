use std::fmt;
use std::path::Path;

use tskip::Error;

/// Command failure, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or settings. Exit 1.
    Usage(String),
    /// The inputs were read but are not acceptable. Exit 2.
    Invalid(Error),
    /// Training produced non-finite values. Exit 3.
    Divergence(Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Invalid(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) => CliError::Usage(m),
            Error::Divergence(_) | Error::NonFinite(_) => CliError::Divergence(e),
            other => CliError::Invalid(other),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Invalid(e) => write!(f, "{e}"),
            CliError::Divergence(e) => write!(f, "{e}"),
        }
    }
}
