//! Few-shot event classification toolkit.
//!
//! The crate covers the whole evaluation pipeline for N-way-K-shot event
//! classification:
//!
//! - [`corpus`]: canonical line-delimited instance format, MAVEN adapter,
//!   frequency filtering and event-type splits.
//! - [`stats`]: trigger long-tail and trigger/event skew diagnostics, and the
//!   trigger-overlap episode counter.
//! - [`embeddings`]: text-format word vectors with a zero-vector OOV policy.
//! - [`sampling`]: instance-uniform, trigger-uniform and confusion sampling of
//!   meta tasks.
//! - [`baselines`]: prototype math plus the context-free String Match and
//!   GloVe Match predictors.
//! - [`encoder`]: a small CNN prototypical encoder with closed-form gradients,
//!   FGM adversarial perturbation and masked-trigger reconstruction.
//! - [`train`]: Adam training loop with early stopping and the multi-seed
//!   evaluation protocol.

pub mod baselines;
pub mod corpus;
pub mod embeddings;
pub mod encoder;
pub mod error;
pub mod sampling;
pub mod stats;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
