use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io { path: PathBuf, source: std::io::Error },
    Core(arratia::Error),
    PartialFailure { failed: usize, total: usize },
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Io { path, source } => write!(f, "io error at {}: {source}", path.display()),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::PartialFailure { failed, total } => {
                write!(f, "{failed} of {total} replicas failed (over the 1% budget)")
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<arratia::Error> for CliError {
    fn from(e: arratia::Error) -> Self {
        CliError::Core(e)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
