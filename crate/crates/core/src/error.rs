//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Error`]. Variants map to
//! the failure classes callers are expected to branch on: bad inputs, bad
//! call ordering, unparseable artifacts, unreachable remote backends, and
//! enumeration guards.

use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// An argument violated a documented precondition.
    InvalidArgument(String),
    /// An operation was invoked on a value in the wrong state
    /// (e.g. expanding a terminated search path).
    InvalidState(String),
    /// A configuration failed validation; holds every violation found.
    InvalidConfig(Vec<String>),
    /// A spec file, corpus line, or wire message could not be parsed.
    Parse(String),
    /// A remote backend could not be reached or replied with garbage.
    BackendUnavailable(String),
    /// An exhaustive enumeration would exceed its guard bound.
    ResourceLimit(String),
    /// File I/O failure, tagged with the path involved.
    Io { path: PathBuf, source: std::io::Error },
}

impl Error {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn invalid_state(msg: impl Into<String>) -> Self {
        Error::InvalidState(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    pub fn backend_unavailable(msg: impl Into<String>) -> Self {
        Error::BackendUnavailable(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::InvalidState(msg) => write!(f, "invalid state: {msg}"),
            Error::InvalidConfig(violations) => {
                write!(f, "invalid config: {}", violations.join("; "))
            }
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
            Error::BackendUnavailable(msg) => write!(f, "backend unavailable: {msg}"),
            Error::ResourceLimit(msg) => write!(f, "resource limit: {msg}"),
            Error::Io { path, source } => write!(f, "io error on {}: {source}", path.display()),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
