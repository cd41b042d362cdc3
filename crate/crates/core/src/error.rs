use std::fmt;

use serde::Serialize;

/// A broken invariant, attributed to the node (or document field) that breaks it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub node: String,
    pub rule: String,
}

impl Violation {
    pub fn new(node: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            node: node.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.node, self.rule)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation failed: {}", join(.0))]
    Validation(Vec<Violation>),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("inadmissible strategy: {0}")]
    Inadmissible(String),

    #[error("{what} ({count}) exceeds cap {cap}")]
    Guard { what: &'static str, count: u128, cap: u128 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::Validation(_) | Error::Invalid(_) | Error::Inadmissible(_) => 2,
            Error::Guard { .. } => 3,
            Error::Io(_) => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
