//! Miniature BERT-style encoder.
//!
//! Each block is pre-LayerNorm: `x + MHA(LN(x))` followed by
//! `x + FF(LN(x))` with a GELU feed-forward, and a final LayerNorm closes the
//! stack. Input word ids are wrapped with the start (CLS) and end (SEP)
//! markers, so an `n`-word input yields `n + 2` output rows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::vocab::{CLS_ID, SEP_ID};
use crate::error::{Error, Result};
use crate::fusion::{glorot, leaf, multi_head, HeadParams, HeadVars};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Filled in from the vocabulary when training from data.
    #[serde(default)]
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= SEP_ID {
            return Err(Error::Config(format!(
                "vocab_size {} does not cover the reserved ids",
                self.vocab_size
            )));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model ({}) must be divisible by n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.max_seq_len < 3 {
            return Err(Error::Config(format!(
                "max_seq_len must be at least 3, got {}",
                self.max_seq_len
            )));
        }
        Ok(())
    }

    /// Longest word sequence accepted by [`encode`].
    pub fn max_words(&self) -> usize {
        self.max_seq_len - 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub heads: Vec<HeadParams>,
    pub w_o: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub ff_w1: Tensor,
    pub ff_b1: Tensor,
    pub ff_w2: Tensor,
    pub ff_b2: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub token_embedding: Tensor,
    pub positions: Tensor,
    pub layers: Vec<EncoderLayer>,
    pub final_gain: Tensor,
    pub final_bias: Tensor,
}

fn uniform<R: Rng>(rng: &mut R, shape: [usize; 2], bound: f64) -> Tensor {
    let data = (0..shape[0] * shape[1])
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("positive dims")
}

fn filled(n: usize, v: f64) -> Tensor {
    Tensor::new(vec![n], vec![v; n]).expect("positive dims")
}

impl EncoderParams {
    pub fn init<R: Rng>(config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let d_head = d / config.n_heads;
        let token_embedding = uniform(rng, [config.vocab_size, d], 0.05);
        let positions = uniform(rng, [config.max_seq_len, d], 0.05);
        let layers = (0..config.n_layers)
            .map(|_| EncoderLayer {
                ln1_gain: filled(d, 1.0),
                ln1_bias: filled(d, 0.0),
                heads: (0..config.n_heads)
                    .map(|_| HeadParams::init(rng, d, d_head, d_head))
                    .collect(),
                w_o: glorot(rng, d, d),
                ln2_gain: filled(d, 1.0),
                ln2_bias: filled(d, 0.0),
                ff_w1: glorot(rng, d, config.d_ff),
                ff_b1: filled(config.d_ff, 0.0),
                ff_w2: glorot(rng, config.d_ff, d),
                ff_b2: filled(d, 0.0),
            })
            .collect();
        Ok(Self {
            token_embedding,
            positions,
            layers,
            final_gain: filled(d, 1.0),
            final_bias: filled(d, 0.0),
        })
    }

    /// Same shapes as [`EncoderParams::init`], every value zero.
    pub fn zeros(config: &EncoderConfig) -> Result<Self> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut p = Self::init(config, &mut rng)?;
        let mut all = Vec::new();
        p.tensors_mut(&mut all);
        for t in all {
            t.data_mut().fill(0.0);
        }
        Ok(p)
    }

    pub(crate) fn named_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.token_embedding"), &self.token_embedding));
        out.push((format!("{prefix}.positions"), &self.positions));
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("{prefix}.layers.{i}");
            out.push((format!("{p}.ln1_gain"), &l.ln1_gain));
            out.push((format!("{p}.ln1_bias"), &l.ln1_bias));
            for (h, head) in l.heads.iter().enumerate() {
                head.named_tensors(&format!("{p}.heads.{h}"), out);
            }
            out.push((format!("{p}.w_o"), &l.w_o));
            out.push((format!("{p}.ln2_gain"), &l.ln2_gain));
            out.push((format!("{p}.ln2_bias"), &l.ln2_bias));
            out.push((format!("{p}.ff_w1"), &l.ff_w1));
            out.push((format!("{p}.ff_b1"), &l.ff_b1));
            out.push((format!("{p}.ff_w2"), &l.ff_w2));
            out.push((format!("{p}.ff_b2"), &l.ff_b2));
        }
        out.push((format!("{prefix}.final_gain"), &self.final_gain));
        out.push((format!("{prefix}.final_bias"), &self.final_bias));
    }

    pub(crate) fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.token_embedding);
        out.push(&mut self.positions);
        for l in &mut self.layers {
            out.push(&mut l.ln1_gain);
            out.push(&mut l.ln1_bias);
            for head in &mut l.heads {
                head.tensors_mut(out);
            }
            out.push(&mut l.w_o);
            out.push(&mut l.ln2_gain);
            out.push(&mut l.ln2_bias);
            out.push(&mut l.ff_w1);
            out.push(&mut l.ff_b1);
            out.push(&mut l.ff_w2);
            out.push(&mut l.ff_b2);
        }
        out.push(&mut self.final_gain);
        out.push(&mut self.final_bias);
    }

    /// Records every tensor on `g` in [`EncoderParams::named_tensors`] order.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> EncoderVars {
        let token_embedding = leaf(g, &self.token_embedding, trainable);
        let positions = leaf(g, &self.positions, trainable);
        let layers = self
            .layers
            .iter()
            .map(|l| LayerVars {
                ln1_gain: leaf(g, &l.ln1_gain, trainable),
                ln1_bias: leaf(g, &l.ln1_bias, trainable),
                heads: l.heads.iter().map(|h| h.bind(g, trainable)).collect(),
                w_o: leaf(g, &l.w_o, trainable),
                ln2_gain: leaf(g, &l.ln2_gain, trainable),
                ln2_bias: leaf(g, &l.ln2_bias, trainable),
                ff_w1: leaf(g, &l.ff_w1, trainable),
                ff_b1: leaf(g, &l.ff_b1, trainable),
                ff_w2: leaf(g, &l.ff_w2, trainable),
                ff_b2: leaf(g, &l.ff_b2, trainable),
            })
            .collect();
        EncoderVars {
            token_embedding,
            positions,
            layers,
            final_gain: leaf(g, &self.final_gain, trainable),
            final_bias: leaf(g, &self.final_bias, trainable),
        }
    }

    /// Tape-free forward pass.
    pub fn encode(&self, config: &EncoderConfig, token_ids: &[usize]) -> Result<EncoderOutput> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let seq = encode(&mut g, config, &vars, token_ids)?;
        Ok(EncoderOutput {
            tokens: g.value(seq.rows).clone(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct LayerVars {
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub heads: Vec<HeadVars>,
    pub w_o: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    pub ff_w1: Var,
    pub ff_b1: Var,
    pub ff_w2: Var,
    pub ff_b2: Var,
}

#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub token_embedding: Var,
    pub positions: Var,
    pub layers: Vec<LayerVars>,
    pub final_gain: Var,
    pub final_bias: Var,
}

impl EncoderVars {
    pub(crate) fn push_vars(&self, out: &mut Vec<Var>) {
        out.push(self.token_embedding);
        out.push(self.positions);
        for l in &self.layers {
            out.push(l.ln1_gain);
            out.push(l.ln1_bias);
            for h in &l.heads {
                h.push_vars(out);
            }
            out.extend([
                l.w_o, l.ln2_gain, l.ln2_bias, l.ff_w1, l.ff_b1, l.ff_w2, l.ff_b2,
            ]);
        }
        out.push(self.final_gain);
        out.push(self.final_bias);
    }
}

/// Encoder output recorded on a graph: `(words + 2) × d_model` rows.
#[derive(Clone, Copy, Debug)]
pub struct EncodedSequence {
    pub rows: Var,
    pub words: usize,
}

impl EncodedSequence {
    /// Local semantics of word `t`: row `t + 1`, past the start marker.
    pub fn target(&self, g: &mut Graph, t: usize) -> Result<Var> {
        if t >= self.words {
            return Err(Error::Index {
                index: t,
                len: self.words,
            });
        }
        let row = g.gather_rows(self.rows, &[t + 1])?;
        let d = g.shape(row)[1];
        g.reshape(row, vec![d])
    }

    /// The start-marker (CLS) row.
    pub fn cls(&self, g: &mut Graph) -> Result<Var> {
        let row = g.gather_rows(self.rows, &[0])?;
        let d = g.shape(row)[1];
        g.reshape(row, vec![d])
    }
}

/// Encodes a word-id sequence (without markers) on `g`.
pub fn encode(
    g: &mut Graph,
    config: &EncoderConfig,
    vars: &EncoderVars,
    token_ids: &[usize],
) -> Result<EncodedSequence> {
    let n = token_ids.len();
    if n == 0 || n > config.max_words() {
        return Err(Error::Contract(format!(
            "encoder input must hold 1..={} tokens, got {n}",
            config.max_words()
        )));
    }
    if let Some(&bad) = token_ids.iter().find(|&&id| id >= config.vocab_size) {
        return Err(Error::Contract(format!(
            "token id {bad} outside vocabulary of size {}",
            config.vocab_size
        )));
    }
    let mut ids = Vec::with_capacity(n + 2);
    ids.push(CLS_ID);
    ids.extend_from_slice(token_ids);
    ids.push(SEP_ID);
    let positions: Vec<usize> = (0..n + 2).collect();

    let tok = g.gather_rows(vars.token_embedding, &ids)?;
    let pos = g.gather_rows(vars.positions, &positions)?;
    let mut x = g.add(tok, pos)?;
    for l in &vars.layers {
        let h = g.layer_norm(x, l.ln1_gain, l.ln1_bias)?;
        let attn = multi_head(g, h, h, h, &l.heads, l.w_o)?;
        x = g.add(x, attn)?;
        let h = g.layer_norm(x, l.ln2_gain, l.ln2_bias)?;
        let f = g.matmul(h, l.ff_w1)?;
        let f = g.add_row(f, l.ff_b1)?;
        let f = g.gelu(f);
        let f = g.matmul(f, l.ff_w2)?;
        let f = g.add_row(f, l.ff_b2)?;
        x = g.add(x, f)?;
    }
    let rows = g.layer_norm(x, vars.final_gain, vars.final_bias)?;
    Ok(EncodedSequence { rows, words: n })
}

/// Tape-free encoder output.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub tokens: Tensor,
}

impl EncoderOutput {
    pub fn words(&self) -> usize {
        self.tokens.rows() - 2
    }

    pub fn target_representation(&self, t: usize) -> Result<Tensor> {
        if t >= self.words() {
            return Err(Error::Index {
                index: t,
                len: self.words(),
            });
        }
        Tensor::vector(self.tokens.row(t + 1).to_vec())
    }

    pub fn cls_representation(&self) -> Tensor {
        Tensor::vector(self.tokens.row(0).to_vec()).expect("non-empty row")
    }
}
