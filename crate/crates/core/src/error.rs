use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A value or input violates a mathematical or domain precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// The remote model endpoint could not be reached or answered garbage.
    #[error("transport error: {0}")]
    Transport(String),

    /// Invalid configuration or command-line arguments.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input data, with a 1-based row number when known.
    #[error("data error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Data { row: Option<usize>, message: String },

    /// Generated or parsed text collides with a template delimiter.
    #[error("template error: {0}")]
    Template(String),

    /// Sampled text or test prompt leaks teacher explanation content.
    #[error("leakage detected: {0}")]
    Leakage(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn data(row: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Data {
            row,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Transport(_) => "transport",
            Error::Config(_) => "config",
            Error::Data { .. } => "data",
            Error::Template(_) => "template",
            Error::Leakage(_) => "leakage",
            Error::Diverged { .. } => "diverged",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Transport(_) => 3,
            Error::Io { .. } | Error::Diverged { .. } => 1,
            _ => 4,
        }
    }
}
