use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
///
/// Every variant maps onto a stable short code (see [`Error::code`]) that the
/// CLI prints as a prefix and the C API returns as a status value.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown model variant '{name}' (expected one of: {expected})")]
    UnknownVariant { name: String, expected: String },
    #[error("lookup failed: {0}")]
    Lookup(String),
    #[error("{path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("data integrity: {0}")]
    Integrity(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("not supported: {0}")]
    Capability(String),
    #[error("unreadable checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Domain { .. } => "domain",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::UnknownVariant { .. } => "variant",
            Error::Lookup(_) => "lookup",
            Error::Parse { .. } => "parse",
            Error::Integrity(_) => "integrity",
            Error::Io { .. } => "io",
            Error::UndefinedMetric(_) => "metric",
            Error::NonFinite { .. } => "nonfinite",
            Error::Capability(_) => "capability",
            Error::Checkpoint(_) => "checkpoint",
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
