//! Adversarial feature-level domain adaptation for appearance-based 3D gaze
//! regression.
//!
//! The crate trains a convolutional gaze regressor on a labeled synthetic
//! source domain and adapts it, without any target labels, to a shifted
//! target domain by playing an adversarial game between a trainable target
//! feature representer and a domain discriminator, while the fully trained
//! source network stays frozen. Inference composes the adapted feature block
//! with the source regression head.
//!
//! Module map:
//! - [`data`]: procedural eye rendering, domain shift, manifests, batching.
//! - [`nets`]: regressor / discriminator architectures, feature stacks.
//! - [`objectives`]: losses and the angular-error metric.
//! - [`opt`]: Adam and WGAN weight clipping.
//! - [`pipeline`]: the three training stages, checkpoints, evaluation.
//! - [`harness`]: CLI, experiment configs, ablation grid, reports, plots.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod linalg;
pub mod nets;
pub mod objectives;
pub mod ops;
pub mod opt;
pub mod pipeline;

pub use error::{Error, Result};

/// Element type used by the shipped training pipeline. The math layers are
/// generic over [`linalg::Scalar`]; tests instantiate them with `f64` when
/// checking analytic gradients against finite differences.
pub type Elem = f32;
