use std::fmt;

/// Error type shared by the whole crate.
///
/// The variants correspond to the process exit codes used by the CLI:
/// `Config`/`Parse`/`Shape` are usage errors, `NonFinite` is a numeric
/// failure, `Io` is an I/O failure.
#[derive(Debug, Clone)]
pub enum Error {
    /// Shape or axis constraint violated; the message names the offending shapes.
    Shape(String),
    /// A NaN or Inf appeared where finite values are required.
    NonFinite(String),
    /// Invalid configuration or argument.
    Config(String),
    /// Malformed input file (CSV, JSON, PGM, container).
    Parse(String),
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Parse(m) => write!(f, "parse error: {m}"),
            Error::Io(m) => write!(f, "io error: {m}"),
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
