use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Variants map onto CLI exit codes: config errors
/// exit with 2, dependency and fingerprint errors with 3, everything else
/// with 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch ({detail})")]
    Dimension { op: &'static str, detail: String },
    #[error("{op}: index out of range ({detail})")]
    Index { op: &'static str, detail: String },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("{op}: zero-norm vector")]
    Degenerate { op: &'static str },
    #[error("config: {0}")]
    Config(String),
    #[error("missing dependency: {0}")]
    Dependency(String),
    #[error("stale embedding database: built with fingerprint {db}, current pipeline has {pipeline}")]
    StaleDb { db: String, pipeline: String },
    #[error("database does not cover test intents: missing {missing}")]
    Coverage { missing: String },
    #[error("{path}: bad file format: {detail}")]
    Format { path: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dimension(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub fn index(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Index { op, detail: detail.into() }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }

    /// Process exit code for the CLI: 2 config, 3 dependency/fingerprint,
    /// 4 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Dependency(_) | Error::StaleDb { .. } | Error::Coverage { .. } => 3,
            _ => 4,
        }
    }
}
