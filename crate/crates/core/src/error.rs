use std::fmt;

use crate::classes::ClassId;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        message: String,
    },
    #[error("uniqueness violation: {0}")]
    Duplicate(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("invalid rule kind: {0}")]
    InvalidKind(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("fusion key mismatch: classes {}", ClassList(.0))]
    Fusion(Vec<ClassId>),
    #[error("empty sampling pool: {0}")]
    EmptyPool(String),
    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Divergence { iteration: usize, loss: f64 },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable tag for the error family.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Duplicate(_) => "duplicate",
            Error::NotFound(_) => "not_found",
            Error::Domain(_) => "domain",
            Error::Coverage(_) => "coverage",
            Error::InvalidKind(_) => "invalid_kind",
            Error::Shape(_) => "shape",
            Error::Fusion(_) => "fusion",
            Error::EmptyPool(_) => "empty_pool",
            Error::Divergence { .. } => "divergence",
            Error::Numeric(_) => "numeric",
            Error::Undefined(_) => "undefined",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn parse(source_name: &str, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl fmt::Display, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_string(),
            source,
        }
    }
}

struct ClassList<'a>(&'a [ClassId]);

impl fmt::Display for ClassList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, id) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{id}")?;
        }
        Ok(())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
