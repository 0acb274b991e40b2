//! Library-wide error type.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument is outside its mathematical domain (bad beta, negative step size, ...).
    Domain(String),
    /// Vector or matrix shapes do not line up.
    Dimension(String),
    /// A gradient evaluation produced NaN or infinity.
    NonFiniteGradient(String),
    /// The discrete iteration left the representable range: a radicand under an
    /// elementwise square root became nonpositive, or a state entry became non-finite.
    /// Carries the step index at which the iteration failed.
    Divergence { step: u64, detail: String },
    /// A tableau failed structural validation; carries the violation list.
    InvalidTableau(Vec<String>),
    /// No builtin tableau under that name.
    UnknownTableau(String),
    /// Tableau file could not be parsed; line number is 1-based.
    Parse { line: usize, msg: String },
    /// Unknown axis name in a stability scan.
    Axis(String),
    /// Bad experiment configuration (unknown key, unparsable value, missing field).
    Config(String),
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Dimension(msg) => write!(f, "dimension error: {msg}"),
            Error::NonFiniteGradient(msg) => write!(f, "non-finite gradient: {msg}"),
            Error::Divergence { step, detail } => {
                write!(f, "divergence at step {step}: {detail}")
            }
            Error::InvalidTableau(violations) => {
                write!(f, "invalid tableau: {}", violations.join("; "))
            }
            Error::UnknownTableau(name) => write!(f, "unknown tableau: {name}"),
            Error::Parse { line, msg } => write!(f, "parse error at line {line}: {msg}"),
            Error::Axis(msg) => write!(f, "axis error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Io(msg) => write!(f, "i/o error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
