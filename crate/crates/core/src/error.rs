//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Variants map onto the
//! failure classes the toolkit distinguishes: caller contract violations,
//! numeric domain errors, malformed on-disk data, invalid runtime data,
//! training divergence, configuration problems, and missing inputs.

use thiserror::Error;

/// One configuration violation, addressed by its flat key path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An argument left the numeric domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed bytes in an on-disk artifact; `offset` names the first bad byte.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Runtime data failed validation (e.g. a non-finite score).
    #[error("data error: {0}")]
    Data(String),

    /// Training produced a non-finite quantity; `step` is the global step index.
    #[error("training diverged at step {step}: {message}")]
    Divergence { step: usize, message: String },

    /// One or more configuration violations; all are reported, not just the first.
    #[error("config error: {}", format_issues(.0))]
    Config(Vec<ConfigIssue>),

    /// A required input file or artifact does not exist.
    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
