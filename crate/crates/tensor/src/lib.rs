//! Small dense tensor engine with a reverse-mode tape.
//!
//! Covers what convolutional encoder/decoder and LSTM predictors need:
//! strided and transposed convolutions, affine maps, pointwise activations,
//! an LSTM cell, mean squared error and Adam. Everything runs on one thread
//! and is deterministic for a fixed seed.

pub mod conv;
mod error;
pub mod init;
pub mod optim;
mod scalar;
mod tape;
mod tensor;

pub use conv::{conv2d, conv_output_size, conv_transpose2d, conv_transpose_output_size};
pub use error::TensorError;
pub use optim::{adam_update, Adam, AdamConfig};
pub use scalar::{gemm, Scalar};
pub use tape::{LstmVars, Tape, Var};
pub use tensor::Tensor;
