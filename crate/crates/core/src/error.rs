use hidflow_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HidError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("spatial extent {extent} at stage {stage} is not divisible by {divisor} ({what})")]
    Divisibility {
        stage: usize,
        extent: usize,
        divisor: usize,
        what: &'static str,
    },

    #[error("non-finite {quantity} at layer `{layer}`")]
    NonFinite {
        quantity: &'static str,
        layer: String,
    },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HidError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        HidError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, HidError>;
