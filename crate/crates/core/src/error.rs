use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters, inconsistent dimensions or malformed configuration.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("index ({i}, {j}) out of range for system size {size}")]
    Index { i: usize, j: usize, size: usize },

    /// A request that would allocate a dense oracle beyond its cap.
    #[error("refused: {0}")]
    Refused(String),

    /// The explicit integrator produced a non-finite value.
    ///
    /// `last_state` is the last state that was entirely finite and `t` is its time.
    #[error("numerical divergence at step {step} (last finite state at t = {t})")]
    Divergence {
        step: u64,
        t: f64,
        last_state: Box<Vec<f64>>,
    },

    #[error("failed to decompose matrix: {0}")]
    Decomposition(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Index { .. } | Error::Refused(_) => 2,
            Error::Divergence { .. } => 3,
            _ => 1,
        }
    }
}

pub(crate) fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::validation(format!(
            "{what}: length {got} does not match expected {expected}"
        )));
    }
    Ok(())
}
