//! Downstream evaluation, metrics, cross-validation and rank statistics.

pub mod cv;
pub mod downstream;
pub mod metrics;
pub mod stats;
