use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] clothfit::Error),

    #[error("{0}")]
    Io(String),

    /// The run finished but a solve did not converge or a check failed.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Failed(_)
            | Self::Core(clothfit::Error::NotConverged(_))
            | Self::Core(clothfit::Error::AllStartsFailed { .. }) => 2,
            _ => 1,
        }
    }
}

pub fn io_err(what: impl std::fmt::Display) -> impl FnOnce(std::io::Error) -> CliError {
    move |e| CliError::Io(format!("{what}: {e}"))
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(format!("csv: {e}"))
    }
}
