//! Entropy-guided structured exploration for autoregressive token policies.
//!
//! The crate is organised the way a training step flows:
//!
//! - [`envs`]: synthetic generation tasks with deterministic binary verifiers.
//! - [`policy`]: differentiable token policies (tabular softmax and a small MLP).
//! - [`first_return`]: token entropies, Top-K anchor selection, block segmentation.
//! - [`explore`]: partial rollouts from intermediate states, empirical values,
//!   rejection of degenerate prompt groups.
//! - [`learner`]: group-relative and value-modulated advantages, the clip-higher
//!   surrogate and optimizers.
//! - [`harness`]: configuration, the training loops, evaluation and reports.

pub mod envs;
pub mod error;
pub mod explore;
pub mod first_return;
pub mod harness;
pub mod learner;
pub mod policy;
pub mod record;
pub mod rng;
pub mod types;

pub use error::{Error, Result};
