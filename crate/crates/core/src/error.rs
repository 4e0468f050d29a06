use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SluError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SluError {
    #[error("dimension mismatch in {op}: left {left:?}, right {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("infeasible alignment: {frames} frames cannot carry {labels} labels (needs {required})")]
    Infeasible {
        frames: usize,
        labels: usize,
        required: usize,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid format in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("version mismatch: expected {expected}, found {found}")]
    Version { expected: String, found: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SluError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SluError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        SluError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

impl SluError {
    /// Stable short name for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            SluError::Dimension { .. } => "dimension",
            SluError::Contract(_) => "contract",
            SluError::Infeasible { .. } => "infeasible",
            SluError::NonFinite(_) => "non_finite",
            SluError::Divergence(_) => "divergence",
            SluError::Data(_) => "data",
            SluError::Format { .. } => "format",
            SluError::Version { .. } => "version",
            SluError::Config(_) => "config",
            SluError::Io { .. } => "io",
        }
    }

    /// Process exit code: 2 usage or configuration, 3 data or files,
    /// 4 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            SluError::Config(_) | SluError::Contract(_) => 2,
            SluError::NonFinite(_) | SluError::Divergence(_) => 4,
            _ => 3,
        }
    }
}
