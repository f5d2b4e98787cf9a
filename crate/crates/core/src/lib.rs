//! Priority-aware hierarchical multiple-instance learning.
//!
//! A bag of instance features is scored by two gated-attention MIL
//! encoders: one predicts the coarse class (Adenoma, Serrated, Others),
//! the other the fine class (seven subtypes). Training combines a joint
//! cross-entropy with a Jensen-Shannon alignment between the coarse head
//! and the aggregated fine head, and a KL term on fine probabilities
//! rescaled by their coarse parent. Feature remixing synthesizes bags from
//! a high-priority and a low-priority source with softened labels, so that
//! the model learns to report the more urgent diagnosis when symptoms mix.

pub mod data;
pub mod error;
pub mod hierloss;
pub mod model;
pub mod numkernel;
pub mod remix;
pub mod taxonomy;
pub mod trainer;

mod rng;

pub use error::{Error, Result};
