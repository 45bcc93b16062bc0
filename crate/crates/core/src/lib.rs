//! Stacked hourglass face alignment: tensors with reverse-mode
//! differentiation, the hourglass / FAN / depth architectures, Gaussian
//! heatmap coding, augmentation, training, evaluation metrics and data I/O.

pub mod augment;
pub mod autograd;
pub mod cli;
pub mod codec;
pub mod data;
pub mod error;
pub mod landmarks;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use landmarks::LandmarkSet;
pub use tensor::{Real, Tensor};
