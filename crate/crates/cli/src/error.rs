use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("invalid config: {0}")]
    Invalid(String),

    #[error("cell d={d} index={index} seed={seed}: {source}")]
    Cell {
        d: usize,
        index: usize,
        seed: u64,
        source: mim_core::Error,
    },

    #[error(transparent)]
    Core(#[from] mim_core::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0} invariant check(s) failed")]
    ChecksFailed(usize),
}

impl CliError {
    /// 2 for unusable configs, 3 for numerical blow-up, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        use mim_core::Error::NonFiniteState;
        match self {
            CliError::Parse(_) | CliError::Invalid(_) => 2,
            CliError::Cell {
                source: NonFiniteState(_),
                ..
            }
            | CliError::Core(NonFiniteState(_)) => 3,
            _ => 1,
        }
    }
}
