use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AclipError {
    #[error(transparent)]
    Tensor(#[from] ndgrad::Error),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("structural mismatch: {0}")]
    Structural(String),
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: usize, detail: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),
    #[error("training diverged at step {step}: {component} = {value}")]
    Divergence {
        step: usize,
        component: String,
        value: f64,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl AclipError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, AclipError>;
