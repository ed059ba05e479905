use std::fmt;
use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
///
/// Variants are grouped by how a caller should react: `Io` means the
/// environment failed (missing file, permissions); everything else means
/// the data or the configuration is wrong.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: line {line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// One or more records failed validation. Every problem found in the
    /// input is listed, not just the first.
    #[error("{}", Issues(.0))]
    Validation(Vec<String>),

    #[error("missing {what}: {}", .missing.join(", "))]
    Lookup { what: &'static str, missing: Vec<String> },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("index {index} out of range (len {len})")]
    Range { index: usize, len: usize },
}

struct Issues<'a>(&'a [String]);

impl fmt::Display for Issues<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "validation failed ({} issue", self.0.len())?;
        if self.0.len() != 1 {
            f.write_str("s")?;
        }
        f.write_str(")")?;
        for issue in self.0 {
            write!(f, "\n  - {issue}")?;
        }
        Ok(())
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for failures of the environment rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
