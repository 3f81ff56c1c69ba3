//! Run configuration: both encoders, the fusion head and training settings.

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub context_encoder: EncoderConfig,
    pub gloss_encoder: EncoderConfig,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Default desk-scale configuration used by the CLI and the synthetic
    /// benchmarks.
    pub fn desk() -> Self {
        let enc = EncoderConfig {
            vocab_size: 0,
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            d_ff: 32,
            max_seq_len: 16,
        };
        Self {
            context_encoder: enc,
            gloss_encoder: enc,
            fusion: FusionConfig {
                poly_m: 2,
                n_heads: 2,
                d_model: 16,
            },
            train: TrainConfig {
                batch_size: 8,
                epochs: 200,
                learning_rate: 1e-3,
                ..TrainConfig::default()
            },
        }
    }

    /// Small configuration for finite-difference checks: d_model 8, one
    /// layer, two heads, poly_m 2, batch 3, vocabulary 50.
    pub fn gradcheck() -> Self {
        let enc = EncoderConfig {
            vocab_size: 50,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            max_seq_len: 10,
        };
        Self {
            context_encoder: enc,
            gloss_encoder: enc,
            fusion: FusionConfig {
                poly_m: 2,
                n_heads: 2,
                d_model: 8,
            },
            train: TrainConfig {
                batch_size: 3,
                epochs: 1,
                ..TrainConfig::default()
            },
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            context_encoder: self.context_encoder,
            gloss_encoder: self.gloss_encoder,
            fusion: self.fusion,
        }
    }

    /// Model config with the vocabulary size filled in.
    pub fn model_for_vocab(&self, vocab_size: usize) -> ModelConfig {
        self.model().resolved(vocab_size)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let d = self.context_encoder.d_model;
        if self.fusion.d_model != 0 && self.fusion.d_model != d {
            return Err(Error::Config(format!(
                "fusion.d_model {} differs from encoder d_model {d}",
                self.fusion.d_model
            )));
        }
        self.model_for_vocab(self.context_encoder.vocab_size.max(crate::data::vocab::SEP_ID + 1))
            .validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
