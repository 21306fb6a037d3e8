use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mask `{name}` has a negative entry {value} at index {index}")]
    NegativeMask {
        name: String,
        index: usize,
        value: f64,
    },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("loss is not finite at step {step}")]
    Diverged { step: usize },

    #[error("layer {layer} is dead: every entry of its mask is zero")]
    DeadLayer { layer: usize },

    #[error("latency table: {0}")]
    Table(String),

    #[error("idx file {path}: {message} (byte offset {offset})")]
    Idx {
        path: String,
        offset: usize,
        message: String,
    },

    #[error("svd: {0}")]
    Svd(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
