//! The full disambiguation model: a context encoder, an independent gloss
//! encoder, and the poly-encoder fusion head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{tokenize, CorpusInstance, Vocab};
use crate::encoder::{encode, EncoderConfig, EncoderParams, EncoderVars};
use crate::error::{Error, Result};
use crate::fusion::{fuse_word, replicate_gloss, FusionConfig, FusionParams, FusionVars};
use crate::tensor::{Graph, ParamSet, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub context_encoder: EncoderConfig,
    pub gloss_encoder: EncoderConfig,
    pub fusion: FusionConfig,
}

impl ModelConfig {
    /// Sets both encoders' vocabulary size and the fusion width.
    pub fn resolved(mut self, vocab_size: usize) -> Self {
        self.context_encoder.vocab_size = vocab_size;
        self.gloss_encoder.vocab_size = vocab_size;
        self.fusion.d_model = self.context_encoder.d_model;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.context_encoder.validate()?;
        self.gloss_encoder.validate()?;
        self.fusion.validate()?;
        let d = self.context_encoder.d_model;
        if self.gloss_encoder.d_model != d || self.fusion.d_model != d {
            return Err(Error::Config(format!(
                "d_model must agree: context {d}, gloss {}, fusion {}",
                self.gloss_encoder.d_model, self.fusion.d_model
            )));
        }
        if self.context_encoder.vocab_size != self.gloss_encoder.vocab_size {
            return Err(Error::Config("encoders must share one vocabulary".into()));
        }
        Ok(())
    }

    pub fn d_model(&self) -> usize {
        self.context_encoder.d_model
    }

    pub fn poly_m(&self) -> usize {
        self.fusion.poly_m
    }

    /// Context word ids (centred on the target) and the target's new index.
    pub fn context_input(&self, inst: &CorpusInstance, vocab: &Vocab) -> Result<(Vec<usize>, usize)> {
        let tok = tokenize(
            &inst.tokens,
            vocab,
            self.context_encoder.max_seq_len,
            Some(inst.target_index),
        )?;
        let t = tok.target.expect("target requested");
        Ok((tok.word_ids().to_vec(), t))
    }

    pub fn gloss_input(&self, gloss: &[String], vocab: &Vocab) -> Result<Vec<usize>> {
        let tok = tokenize(gloss, vocab, self.gloss_encoder.max_seq_len, None)?;
        Ok(tok.word_ids().to_vec())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub context: EncoderParams,
    pub gloss: EncoderParams,
    pub fusion: FusionParams,
}

impl ModelParams {
    /// Seeded initialization: context encoder, then gloss encoder, then
    /// fusion head, all drawn from one ChaCha8 stream.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let context = EncoderParams::init(&config.context_encoder, &mut rng)?;
        let gloss = EncoderParams::init(&config.gloss_encoder, &mut rng)?;
        let fusion = FusionParams::init(&config.fusion, &mut rng)?;
        Ok(Self {
            context,
            gloss,
            fusion,
        })
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.context.named_tensors("context", &mut out);
        self.gloss.named_tensors("gloss", &mut out);
        self.fusion.named_tensors("fusion", &mut out);
        out
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ModelVars {
        ModelVars {
            context: self.context.bind(g, trainable),
            gloss: self.gloss.bind(g, trainable),
            fusion: self.fusion.bind(g, trainable),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }
}

impl ParamSet for ModelParams {
    fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.context.tensors_mut(&mut out);
        self.gloss.tensors_mut(&mut out);
        self.fusion.tensors_mut(&mut out);
        out
    }
}

#[derive(Clone, Debug)]
pub struct ModelVars {
    pub context: EncoderVars,
    pub gloss: EncoderVars,
    pub fusion: FusionVars,
}

impl ModelVars {
    /// Leaves in [`ParamSet::tensors`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.context.push_vars(&mut out);
        self.gloss.push_vars(&mut out);
        self.fusion.push_vars(&mut out);
        out
    }
}

/// Fused word representation `poly_m × d_model`: encode the full context,
/// take the target row, and attend over the context with the fusion heads.
pub fn word_representation(
    g: &mut Graph,
    config: &ModelConfig,
    vars: &ModelVars,
    context_ids: &[usize],
    target: usize,
) -> Result<Var> {
    let seq = encode(g, &config.context_encoder, &vars.context, context_ids)?;
    let r = seq.target(g, target)?;
    fuse_word(g, &config.fusion, &vars.fusion, r, seq.rows)
}

/// Gloss representation `poly_m × d_model`: the CLS row, replicated.
pub fn gloss_representation(
    g: &mut Graph,
    config: &ModelConfig,
    vars: &ModelVars,
    gloss_ids: &[usize],
) -> Result<Var> {
    let seq = encode(g, &config.gloss_encoder, &vars.gloss, gloss_ids)?;
    let r = seq.cls(g)?;
    replicate_gloss(g, r, config.poly_m())
}
