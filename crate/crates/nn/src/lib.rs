//! Sequential CNNs with backprop, plus compression of their parameters.
//!
//! Activations are `f64` arrays in `[batch, channels, height, width]` or
//! `[batch, features]` layout.

pub mod compress;
pub mod data;
pub mod layers;
pub mod model;
pub mod train;

pub use data::{gen_bars, gen_blobs, Dataset};
pub use layers::{Array, Layer, LayerKind};
pub use model::ModelGraph;
pub use train::{accuracy, train, EpochStats, TrainConfig};

use thiserror::Error;
use ttkit_core::container::ContainerError;
use ttkit_core::NumericError;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer {layer}: {message}")]
    Shape { layer: String, message: String },
    #[error("model: {0}")]
    Model(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Container(#[from] ContainerError),
}
