//! Single-image super-resolution with image-specific convolutional kernel
//! modulation: tensors, convolution, attention layers, the U-hourglass dense
//! network, data pipeline, training and evaluation.

pub mod arch;
pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod ikm;
pub mod metrics;
pub mod ops;
pub mod tensor;
pub mod train;

pub use error::{IkmError, Result};
