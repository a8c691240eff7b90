//! Adversarial contrastive training and robustness evaluation at desk scale.
//!
//! The crate bundles a small reverse-mode differentiable engine, a
//! convolutional encoder with classifier and projector heads, FGSM and PGD
//! attacks, nineteen common corruptions at five severities, the two
//! training recipes (standard cross-entropy and adversarial contrastive
//! learning) and the evaluation and reporting used to compare them.
//!
//! The engine and model are generic over [`Scalar`] (`f32` or `f64`);
//! the aliases below fix the `f32` instantiation used by the pipeline.

pub mod attack;
pub mod autodiff;
pub mod corruption;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision tensor.
pub type Tensor = autodiff::Tensor<f32>;
/// Double-precision tensor, used for gradient checks.
pub type Tensor64 = autodiff::Tensor<f64>;
/// Single-precision encoder, classifier and projector.
pub type Model = model::ModelBundle<f32>;
/// Double-precision model.
pub type Model64 = model::ModelBundle<f64>;
