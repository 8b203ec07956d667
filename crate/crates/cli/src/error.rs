use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad invocation or configuration; exit status 2.
    #[error("usage: {0}")]
    Usage(String),

    /// A check ran to completion and failed; exit status 1.
    #[error("check failed: {0}")]
    Check(String),

    #[error(transparent)]
    Core(#[from] rwta::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}
