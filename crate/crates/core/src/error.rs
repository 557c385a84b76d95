use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {what}: {reason}")]
    InvalidValue { what: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("need at least {required} vehicle states, got {actual}")]
    TooFewStates { required: usize, actual: usize },

    #[error("unknown scenario `{name}`; valid names: {}", valid.join(", "))]
    UnknownScenario {
        name: String,
        valid: Vec<&'static str>,
    },

    #[error("scenario `{scenario}` is under-configured: speed ladder has {ladder} entries for {needed} deadlocked vehicles")]
    LadderExhausted {
        scenario: String,
        ladder: usize,
        needed: usize,
    },

    #[error("scenario failed validation:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("failed to parse scenario file: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("failed to serialize: {0}")]
    Serialize(#[from] toml::ser::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidValue {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
