use thiserror::Error;

pub type Shape = (usize, usize);

/// Failures raised while building or differentiating a computation graph.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("ln: non-positive input {value} at ({row}, {col}); clamp before taking logs")]
    NonPositiveLog { value: f64, row: usize, col: usize },
    #[error("backward: root must be a 1x1 scalar, got {0:?}")]
    NonScalarRoot(Shape),
    #[error("{op}: {reason}")]
    Invalid { op: &'static str, reason: String },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid episode request: {0}")]
    Episode(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn format(path: impl AsRef<std::path::Path>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
