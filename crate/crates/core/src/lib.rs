//! Joint meta-learning of per-label training weights and per-label
//! prediction thresholds for multi-label classification.

pub mod classifier;
pub mod data;
pub mod meta;
pub mod metrics;
pub mod ndiff;
