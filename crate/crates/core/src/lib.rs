//! Two-stage partial multi-label learning: candidate-set disambiguation by a
//! one-step Bernoulli policy, followed by budgeted sequential feature
//! selection, with the evaluation protocol and brute-force theory oracles.

pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod harness;
pub mod math;
pub mod seed;
pub mod stage1;
pub mod stage2;
pub mod verify;

pub use error::{PmlError, Result};
