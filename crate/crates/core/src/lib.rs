//! Frame-wise gesture recognition toolkit.
//!
//! The crate is organized around a small dense [`tensor::Tensor`] type and a
//! deterministic [`rng::Rng`]. On top of those sit:
//!
//! - [`indrnn`]: stacked bidirectional IndRNN layers with a per-frame linear
//!   classification head,
//! - [`train`]: hand-derived backpropagation through time, SGD with
//!   exponential learning-rate decay, and a finite-difference gradient checker,
//! - [`cnn`]: a block-structured convolutional feature extractor with
//!   per-block freezing and a replaceable class head,
//! - [`gradcam`]: gradient-weighted class activation maps over the CNN,
//! - [`metrics`]: confusion-matrix statistics (per-class ratios, micro/macro
//!   averages, macro F1),
//! - [`data`]: transcript parsing, frame downsampling, leave-one-trial-out
//!   splits, synthetic dataset generators, and ribbon plots,
//! - [`io`]: the binary tensor file format and the model checkpoint container,
//! - [`image`]: PGM/PPM reading and writing.
//!
//! Everything is f64, row-major, and deterministic given a seed.

pub mod cnn;
pub mod data;
pub mod error;
pub mod gradcam;
pub mod image;
pub mod indrnn;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Activation, Tensor};
