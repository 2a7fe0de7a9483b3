use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("failed to read {path}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to write {path}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid corruption spec: {0}")]
    InvalidSpec(String),

    #[error("calibration not supported for method {0}")]
    UnsupportedCalibration(String),

    #[error("invalid pipeline: {0}")]
    InvalidPipeline(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("params format error: {0}")]
    Format(String),

    #[error("query budget exhausted after {queries_used} labeling queries")]
    PartialShadow {
        queries_used: u64,
        /// Shadow trained on whatever was labeled before the budget ran out.
        params: Box<crate::model::ModelParams>,
    },

    #[error("undefined rate: {0}")]
    UndefinedRate(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }

    /// True for failures that come from talking to a remote target.
    pub fn is_transport(&self) -> bool {
        matches!(self, Error::Transport(_) | Error::Protocol(_))
    }
}
