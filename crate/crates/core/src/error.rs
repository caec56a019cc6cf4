use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the domain of a function (non-finite values, etc).
    #[error("domain error: {0}")]
    Domain(String),
    /// Operation called in a mode its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),
    /// Dimension or shape mismatch between operands.
    #[error("shape error: {0}")]
    Shape(String),
    #[error("Newton iteration failed at step {step} (residual {residual:e})")]
    Newton { step: usize, residual: f64 },
    #[error("singular linear system at step {step}")]
    Singular { step: usize },
    #[error("line search failed after {backtracks} backtracks (last step {step:e})")]
    LineSearch { backtracks: usize, step: f64 },
    #[error("format error: {0}")]
    Format(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Short stable tag used in single-line diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Usage(_) => "usage",
            Error::Shape(_) => "shape",
            Error::Newton { .. } => "newton",
            Error::Singular { .. } => "singular",
            Error::LineSearch { .. } => "line-search",
            Error::Format(_) => "format",
            Error::Io { .. } => "io",
        }
    }
}
