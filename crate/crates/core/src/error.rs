use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid geometry, parameters, or query configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("index {index} out of range (limit {limit})")]
    Bounds { index: u64, limit: u64 },

    /// Mathematical domain violation, e.g. k > N for a binomial coefficient.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inputs that are individually valid but cannot be combined.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("unsupported format_version {found} in {what} (expected {expected})")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    /// Whether this error stems from user input (flags, files, parameters)
    /// rather than the environment.
    pub fn is_usage(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}
