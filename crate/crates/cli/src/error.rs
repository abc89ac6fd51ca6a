use std::io;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("input: {}: {source}", path.display())]
    Input {
        path: PathBuf,
        source: ccpred::Error,
    },

    #[error("output: {} is locked by another run", .0.display())]
    Locked(PathBuf),

    #[error("output: {}: {source}", path.display())]
    Output { path: PathBuf, source: io::Error },

    #[error("{}", describe(.0))]
    Core(#[from] ccpred::Error),
}

fn describe(e: &ccpred::Error) -> String {
    match e {
        ccpred::Error::InvalidConfig(_) => format!("config: {e}"),
        ccpred::Error::InsufficientData(_) => format!("data: {e}"),
        _ => format!("runtime: {e}"),
    }
}

impl CliError {
    /// Process exit status: 2 usage, 3 malformed config, 4 missing or
    /// unusable input, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Input { .. } => 4,
            CliError::Core(ccpred::Error::InvalidConfig(_)) => 3,
            CliError::Core(ccpred::Error::InsufficientData(_)) => 4,
            CliError::Locked(_) | CliError::Output { .. } | CliError::Core(_) => 1,
        }
    }

    pub fn output(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Output {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
