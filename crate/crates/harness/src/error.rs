use std::path::PathBuf;

use josnc_core::network::Checkpoint;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize, last_good: Option<Box<Checkpoint>> },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Core(josnc_core::Error),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Diverged { .. } => 3,
            _ => 1,
        }
    }
}

impl From<josnc_core::Error> for HarnessError {
    fn from(e: josnc_core::Error) -> Self {
        match e {
            josnc_core::Error::Diverged { epoch, step, last_good } => HarnessError::Diverged { epoch, step, last_good },
            josnc_core::Error::Config(msg) => HarnessError::Config(msg),
            other => HarnessError::Core(other),
        }
    }
}
