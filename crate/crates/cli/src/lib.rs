//! Experiment harness for `envara-core`: configuration, the convergence and energy studies,
//! and CSV output.

pub mod config;
pub mod experiments;

use std::path::{Path, PathBuf};

use thiserror::Error;

use envara_core::splitting::RunFailure;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config key `{key}`: expected {expected}")]
    InvalidConfig { key: String, expected: String },

    #[error(transparent)]
    Solver(#[from] envara_core::Error),

    #[error(transparent)]
    Run(#[from] RunFailure),

    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Process exit code: 2 for configuration errors, 3 for solver failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        let core = match self {
            HarnessError::InvalidConfig { .. } => return 2,
            HarnessError::Solver(e) => e,
            HarnessError::Run(f) => &f.error,
            HarnessError::Io { .. } => return 1,
        };
        if core.is_solver_failure() {
            3
        } else {
            1
        }
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    std::fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}
