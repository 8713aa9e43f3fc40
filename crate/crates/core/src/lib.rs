//! Hierarchical spatial transformer over irregular 2D point samples.
//!
//! The crate is organised bottom-up:
//!
//! - [`quadtree`]: spatial index, selective key sets and the pooling operator.
//! - [`encoding`]: random-Fourier-feature positional encoding and point embeddings.
//! - [`tensor`]: a small dense tensor engine with reverse-mode gradients and Adam.
//! - [`model`]: encoder/decoder built from hierarchical sparse attention, plus the
//!   dense all-pair baseline.
//! - [`uq`]: uncertainty score, temperature calibration and AvU metrics.
//! - [`data`]: synthetic Gaussian-process datasets and their on-disk format.
//! - [`harness`]: training loop, evaluation, scaling benchmarks and sweeps.
//!
//! Core math is generic over the scalar type through [`Real`]; the aliases at the
//! crate root fix it to `f64`, which is what training and the harness use.

pub mod data;
pub mod encoding;
pub mod error;
pub mod harness;
pub mod model;
pub mod quadtree;
pub mod scalar;
pub mod tensor;
pub mod uq;

pub use error::{HstError, Result};
pub use scalar::Real;

pub type PointSet = quadtree::PointSet<f64>;
pub type QuadTree = quadtree::QuadTree<f64>;
pub type PosEncoder = encoding::PosEncoder<f64>;
pub type EmbedParams = encoding::EmbedParams<f64>;
pub type Tensor = tensor::Tensor<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type EncodedState<'a> = model::EncodedState<'a, f64>;
pub type Prediction = model::Prediction<f64>;
pub type UqConfig = uq::UqConfig<f64>;
