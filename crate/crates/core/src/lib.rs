//! Debiased recommendation from missing-not-at-random feedback.
//!
//! A hypothesis is split into a feature map, a prediction head and a critic
//! on the latent space. Training combines the logged log loss with an
//! adversarial KL term between logged and uniform latent distributions,
//! self-training on uniform pairs against a lagged teacher, and entropy
//! minimization. Biased ERM, IPS and a multi-task objective serve as
//! baselines; a confounded synthetic generator supplies ground truth.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod numcore;
pub mod synth;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
