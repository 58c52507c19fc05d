//! Uncertainty-aware Mobile-Former for event-camera pattern recognition.
//!
//! The crate is organized around a small reverse-mode autodiff tensor engine
//! ([`tensor::Tensor`]), generic over the scalar type (`f32` for training,
//! `f64` for gradient checking). On top of it sit:
//!
//! - [`events`]: event-stream parsing, temporal splitting, frame stacking,
//!   and a synthetic moving-bar generator for desk-scale experiments;
//! - [`blocks`]: the Mobile sub-block (pointwise + depthwise 3D convolutions
//!   with dynamic ReLU), the Former sub-block (MHSA + FFN over global
//!   tokens), and the bidirectional uncertainty-aware bridge that samples
//!   the inter-branch message from a predicted Gaussian;
//! - [`model`]: stem embedding, stacked blocks, classification head,
//!   cross-entropy loss, checkpointing and feature-map export;
//! - [`training`]: AdamW, the training loop, top-1 evaluation, ablation and
//!   sweep runners;
//! - [`harness`]: JSON run configuration and the operations behind the CLI;
//! - [`gradcheck`]: the central-finite-difference suite used by tests and
//!   the `gradcheck` subcommand.

pub mod blocks;
pub mod checkpoint;
pub mod error;
pub mod events;
pub mod gradcheck;
pub mod harness;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{DataError, Error, NumericError, TensorError};
pub use rng::SeedRng;
pub use scalar::Scalar;

/// 32-bit tensor, the training default.
pub type Tensor32 = tensor::Tensor<f32>;
/// 64-bit tensor, used by the gradient-check suite.
pub type Tensor64 = tensor::Tensor<f64>;








