//! Observation encoder shared by both stages.
//!
//! An observation is a feature vector concatenated with an L-dimensional
//! candidate mask. It is projected to `model_width` and treated as a single
//! token by a stack of post-norm transformer blocks (self-attention over one
//! token, GELU feed-forward, layer norm), or by residual two-layer
//! perceptrons in the `mlp` variant. The final token is the representation
//! consumed by the discriminative head, the label policy and the feature
//! policy.
//!
//! Every parameter block has a hand-written reverse pass; forward passes
//! return a [`Tape`] that the matching backward pass consumes.

mod network;
mod optim;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{PmlError, Result};

pub use network::{
    disc_backward, disc_logits, encode, encode_batch, encoder_backward, feature_backward,
    feature_logits, label_logits, label_policy_backward, Tape,
};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{BlockKind, BlockSpec, Group, ParamId, ParameterStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderVariant {
    Transformer,
    Mlp,
}

impl std::str::FromStr for EncoderVariant {
    type Err = PmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(EncoderVariant::Transformer),
            "mlp" => Ok(EncoderVariant::Mlp),
            other => Err(PmlError::Config(format!("unknown encoder variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub model_width: usize,
    pub head_count: usize,
    pub layer_count: usize,
    pub feedforward_width: usize,
    pub variant: EncoderVariant,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            model_width: 128,
            head_count: 4,
            layer_count: 2,
            feedforward_width: 512,
            variant: EncoderVariant::Transformer,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// Small residual-MLP encoder used for desk-scale runs.
    pub fn desk(seed: u64) -> Self {
        EncoderConfig {
            model_width: 32,
            head_count: 4,
            layer_count: 1,
            feedforward_width: 64,
            variant: EncoderVariant::Mlp,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_width == 0
            || self.head_count == 0
            || self.layer_count == 0
            || self.feedforward_width == 0
        {
            return Err(PmlError::Config("encoder sizes must be at least 1".into()));
        }
        if !self.model_width.is_multiple_of(self.head_count) {
            return Err(PmlError::Config(format!(
                "model_width {} is not divisible by head_count {}",
                self.model_width, self.head_count
            )));
        }
        Ok(())
    }
}

/// Initializes every trainable block for `d` features and `labels` labels.
pub fn init_parameters(cfg: &EncoderConfig, d: usize, labels: usize) -> Result<ParameterStore> {
    ParameterStore::new(cfg, d, labels)
}
