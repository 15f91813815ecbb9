//! OVE-PG: a one-vs-each softmax approximation with Pólya-Gamma augmentation
//! and KL-to-prior regularization, for fine-tuning classifiers against a
//! frozen pre-trained prior model.
//!
//! The crate is organized around the pieces of the training objective:
//!
//! - [`pg`] — the Pólya-Gamma distribution: analytic moments and seeded
//!   sampling via the truncated Gamma-sum construction.
//! - [`ove`] — one-vs-each machinery: the comparison tensor `A`, pairwise
//!   difference tensors ψ/κ, OVE scores and the softmax baseline.
//! - [`posterior`] — conjugate updates: ω from the prior model and the
//!   diagonal Gaussian posterior over ψ with reparameterized sampling.
//! - [`objective`] — the ELBO loss (chain-averaged OVE nll + β-weighted KL
//!   penalty) with analytic gradients w.r.t. the fine-tuned logits.
//! - [`models`] — polynomial-basis and MLP logit models with manual
//!   backpropagation, pairable as frozen prior + trainable copy.
//! - [`trainer`] — SGD training loop, cosine schedule, evaluation metrics.
//! - [`data`] — 1D synthetic generator, IDX loaders, per-class subsetting.
//!
//! All numerics are generic over the scalar type via [`scalar::Scalar`]
//! (`f32` or `f64`); concrete `f64` aliases for the main types live at the
//! crate root.

pub mod data;
pub mod error;
pub mod models;
pub mod objective;
pub mod ove;
pub mod pg;
pub mod posterior;
pub mod rng;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::RngState;
pub use scalar::Scalar;

/// Concrete aliases at the default (f64) precision used by the CLI and the
/// bundled experiments.
pub type Logits64 = ove::Logits<f64>;
pub type PairwiseTensor64 = ove::PairwiseTensor<f64>;
pub type ATensor64 = ove::ATensor<f64>;
pub type PosteriorGaussian64 = posterior::PosteriorGaussian<f64>;
pub type LossBreakdown64 = objective::LossBreakdown<f64>;
pub type LogitGradient64 = objective::LogitGradient<f64>;
pub type Model64 = models::Model<f64>;
pub type ModelPair64 = models::ModelPair<f64>;
pub type TrainConfig64 = trainer::TrainConfig<f64>;
pub type Dataset64 = data::Dataset<f64>;

