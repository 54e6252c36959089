//! Vectorized convolutional neural networks on the CPU.
//!
//! Convolution is lowered to a matrix product through patch matrices
//! ([`vectorize::im2col`]) and back-propagated with their many-to-one
//! adjoint ([`vectorize::col2im`]); pooling is an accumulation driven by a
//! precomputed index map; a mini-batch is processed by placing the patch
//! matrices of its samples side by side. [`variants`] implements six
//! executors with increasing degrees of vectorization behind one interface
//! and [`bench`] measures them.
//!
//! The `examples/` directory of this crate has one runnable program per
//! capability; `cargo run --release -p vcnn --example <name>`.

pub mod bench;
pub mod cli;
pub mod denoise;
pub mod error;
pub mod io;
pub mod layers;
pub mod network;
pub mod selftest;
pub mod synth;
pub mod tensor;
pub mod variants;
pub mod vectorize;

pub use error::{Error, Result};
pub use layers::{Activation, LossKind, Targets};
pub use network::{assemble_batch, LayerSpec, Network, NetworkSpec, TrainConfig};
pub use tensor::{DType, Dims, IndexMap, Matrix, Reducer, Scalar, Tensor};
pub use variants::{Executor, Variant};
