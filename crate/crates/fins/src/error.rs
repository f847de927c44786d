use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for the whole pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} (line {line}): {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid shape parameters: {0}")]
    InvalidShape(String),

    #[error("point cloud is empty after confidence filtering (threshold {threshold})")]
    EmptyAfterFilter { threshold: f64 },

    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: non-finite loss for {consecutive} consecutive epochs")]
    Diverged { epoch: usize, consecutive: usize },

    #[error("degenerate field gradient at ({x:.4}, {y:.4}, {z:.4}): |grad| = {norm:.3e}")]
    DegenerateGradient { x: f64, y: f64, z: f64, norm: f64 },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
