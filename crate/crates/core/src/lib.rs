//! # mishape
//!
//! Neural mutual-information estimation and information-shaping encoders for
//! fixed-size embeddings.
//!
//! The crate is organised bottom-up:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`nn`] | dense ReLU networks, Adam, gradient checking, checkpoints |
//! | [`mi`] | Donsker-Varadhan critics, marginal resampling, exact discrete MI |
//! | [`data`] | [`VectorDataset`], ISVD1/CSV formats, synthetic generators, splits |
//! | [`shaping`] | the weighted-MI encoder objective and its training loop |
//! | [`eval`] | downstream classifiers, accuracy, ROC/AUROC, bias, reports |
//!
//! Everything is deterministic for a fixed seed: models are plain values, all
//! randomness comes from explicitly seeded ChaCha streams and every batch
//! reduction runs in a fixed order.
//!
//! ```
//! use mishape::data::gen_gaussian_pairs;
//! use mishape::mi::{estimate_mi, EstimatorConfig};
//!
//! # fn main() -> mishape::Result<()> {
//! let pairs = gen_gaussian_pairs(0.5, 1, 500, 7)?;
//! let cfg = EstimatorConfig { max_iterations: 20, ..EstimatorConfig::default() };
//! let est = estimate_mi(&pairs.batch.cast::<f32>(), &cfg)?;
//! assert!(est.value_nats >= 0.0);
//! # Ok(())
//! # }
//! ```

mod binio;
pub mod data;
pub mod error;
pub mod eval;
pub mod fingerprint;
pub mod mi;
pub mod nn;
pub mod shaping;

pub use data::VectorDataset;
pub use error::{Error, Result};
pub use nn::{Activation, Mlp, Precision, Scalar};
