use std::path::PathBuf;

use modcnn_tensor::TensorError;
use thiserror::Error;

use crate::registry::UnknownName;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("layer {layer}: {source}")]
    Layer { layer: String, source: TensorError },
    #[error(transparent)]
    UnknownName(#[from] UnknownName),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Mechanism(String),
    #[error("{file}: offset {offset}: {msg}")]
    Data {
        file: PathBuf,
        offset: u64,
        msg: String,
    },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("weight file: {0}")]
    WeightFormat(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    #[error("{0}")]
    Analysis(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Attaches a layer name to tensor-level failures.
pub(crate) trait LayerContext<T> {
    fn in_layer(self, layer: &str) -> Result<T>;
}

impl<T> LayerContext<T> for std::result::Result<T, TensorError> {
    fn in_layer(self, layer: &str) -> Result<T> {
        self.map_err(|source| Error::Layer {
            layer: layer.to_string(),
            source,
        })
    }
}
