//! Poly-encoder fusion of local and global semantics.
//!
//! The target-token embedding is replicated into `poly_m` query codes that
//! attend over the whole context embedding with `h` heads; the concatenated
//! heads are projected back to `d_model`. Glosses are represented by their
//! start-marker embedding replicated to the same `poly_m × d_model` shape so
//! both sides can be compared with a single inner product.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub poly_m: usize,
    pub n_heads: usize,
    #[serde(default)]
    pub d_model: usize,
}

impl FusionConfig {
    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn d_v(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.poly_m == 0 {
            return Err(Error::Config("poly_m must be at least 1".into()));
        }
        if self.n_heads == 0 || self.d_model == 0 {
            return Err(Error::Config("fusion heads and d_model must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "fusion heads ({}) must divide d_model ({})",
                self.n_heads, self.d_model
            )));
        }
        Ok(())
    }
}

/// Glorot-uniform matrix with bound sqrt(6 / (fan_in + fan_out)).
pub(crate) fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("positive dims")
}

/// Projections for one attention head. No bias terms.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

impl HeadParams {
    pub fn init<R: Rng>(rng: &mut R, d_model: usize, d_k: usize, d_v: usize) -> Self {
        Self {
            w_q: glorot(rng, d_model, d_k),
            w_k: glorot(rng, d_model, d_k),
            w_v: glorot(rng, d_model, d_v),
        }
    }

    pub(crate) fn named_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.w_q"), &self.w_q));
        out.push((format!("{prefix}.w_k"), &self.w_k));
        out.push((format!("{prefix}.w_v"), &self.w_v));
    }

    pub(crate) fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.w_q);
        out.push(&mut self.w_k);
        out.push(&mut self.w_v);
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> HeadVars {
        HeadVars {
            w_q: leaf(g, &self.w_q, trainable),
            w_k: leaf(g, &self.w_k, trainable),
            w_v: leaf(g, &self.w_v, trainable),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
}

impl HeadVars {
    pub(crate) fn push_vars(&self, out: &mut Vec<Var>) {
        out.extend([self.w_q, self.w_k, self.w_v]);
    }
}

pub(crate) fn leaf(g: &mut Graph, t: &Tensor, trainable: bool) -> Var {
    if trainable {
        g.param(t.clone())
    } else {
        g.constant(t.clone())
    }
}

/// Per-head projections plus the shared output projection `W^O`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub heads: Vec<HeadParams>,
    pub w_o: Tensor,
}

impl FusionParams {
    pub fn init<R: Rng>(config: &FusionConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let heads = (0..config.n_heads)
            .map(|_| HeadParams::init(rng, config.d_model, config.d_k(), config.d_v()))
            .collect();
        let w_o = glorot(rng, config.n_heads * config.d_v(), config.d_model);
        Ok(Self { heads, w_o })
    }

    pub(crate) fn named_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, h) in self.heads.iter().enumerate() {
            h.named_tensors(&format!("{prefix}.heads.{i}"), out);
        }
        out.push((format!("{prefix}.w_o"), &self.w_o));
    }

    pub(crate) fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        for h in &mut self.heads {
            h.tensors_mut(out);
        }
        out.push(&mut self.w_o);
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> FusionVars {
        FusionVars {
            heads: self.heads.iter().map(|h| h.bind(g, trainable)).collect(),
            w_o: leaf(g, &self.w_o, trainable),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FusionVars {
    pub heads: Vec<HeadVars>,
    pub w_o: Var,
}

impl FusionVars {
    pub(crate) fn push_vars(&self, out: &mut Vec<Var>) {
        for h in &self.heads {
            h.push_vars(out);
        }
        out.push(self.w_o);
    }
}

/// Stacks `poly_m` copies of a `d_model` vector into a `poly_m × d_model` matrix.
pub fn replicate_query(g: &mut Graph, r: Var, poly_m: usize) -> Result<Var> {
    if poly_m == 0 {
        return Err(Error::Config("poly_m must be at least 1".into()));
    }
    let d = g.value(r).numel();
    let row = g.reshape(r, vec![1, d])?;
    g.gather_rows(row, &vec![0; poly_m])
}

/// Gloss-side replication; identical to [`replicate_query`].
pub fn replicate_gloss(g: &mut Graph, r_g: Var, poly_m: usize) -> Result<Var> {
    replicate_query(g, r_g, poly_m)
}

#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    /// `rows(q) × d_v`
    pub output: Var,
    /// `rows(q) × rows(k)`, each row sums to 1
    pub weights: Var,
}

/// Scaled dot-product attention for one head:
/// `softmax((Q·W^Q)(K·W^K)ᵀ / sqrt(d_k)) · (V·W^V)`.
pub fn attention_head(g: &mut Graph, q: Var, k: Var, v: Var, head: &HeadVars) -> Result<HeadOutput> {
    if g.shape(k)[0] != g.shape(v)[0] {
        return Err(Error::Shape {
            op: "attention_head",
            left: g.shape(k).to_vec(),
            right: g.shape(v).to_vec(),
        });
    }
    let d_k = g.shape(head.w_k)[1];
    if g.shape(head.w_q)[1] != d_k {
        return Err(Error::Shape {
            op: "attention_head",
            left: g.shape(head.w_q).to_vec(),
            right: g.shape(head.w_k).to_vec(),
        });
    }
    let qp = g.matmul(q, head.w_q)?;
    let kp = g.matmul(k, head.w_k)?;
    let vp = g.matmul(v, head.w_v)?;
    let kt = g.transpose(kp)?;
    let logits = g.matmul(qp, kt)?;
    let scaled = g.scale(logits, 1.0 / (d_k as f64).sqrt());
    let weights = g.row_softmax(scaled)?;
    let output = g.matmul(weights, vp)?;
    Ok(HeadOutput { output, weights })
}

/// Concatenates head outputs along the feature axis and projects with `W^O`.
pub fn fuse_heads(g: &mut Graph, heads: &[Var], w_o: Var, expected_heads: usize) -> Result<Var> {
    if heads.len() != expected_heads {
        return Err(Error::Config(format!(
            "expected {expected_heads} heads, got {}",
            heads.len()
        )));
    }
    let cat = g.concat(heads, 1)?;
    g.matmul(cat, w_o)
}

/// Multi-head attention of `q` over `k`/`v` followed by the output projection.
pub fn multi_head(g: &mut Graph, q: Var, k: Var, v: Var, heads: &[HeadVars], w_o: Var) -> Result<Var> {
    let outs = heads
        .iter()
        .map(|h| attention_head(g, q, k, v, h).map(|o| o.output))
        .collect::<Result<Vec<_>>>()?;
    fuse_heads(g, &outs, w_o, heads.len())
}

/// Word-side fused representation: replicate the target embedding into
/// `poly_m` queries and attend over the full context embedding.
pub fn fuse_word(
    g: &mut Graph,
    config: &FusionConfig,
    vars: &FusionVars,
    target: Var,
    context: Var,
) -> Result<Var> {
    let q = replicate_query(g, target, config.poly_m)?;
    multi_head(g, q, context, context, &vars.heads, vars.w_o)
}

fn flatten_row(g: &mut Graph, rep: Var) -> Result<Var> {
    let n = g.value(rep).numel();
    g.reshape(rep, vec![1, n])
}

fn check_same_shape(g: &Graph, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Shape {
            op: "score_pair",
            left: g.shape(a).to_vec(),
            right: g.shape(b).to_vec(),
        });
    }
    Ok(())
}

/// Mean over codes of the per-code inner product:
/// `(1/poly_m) · Σ_{i,d} word[i,d]·gloss[i,d]`. Returns a scalar var.
pub fn score_pair(g: &mut Graph, word: Var, gloss: Var) -> Result<Var> {
    check_same_shape(g, word, gloss)?;
    let poly_m = g.shape(word)[0];
    let w = flatten_row(g, word)?;
    let s = flatten_row(g, gloss)?;
    let st = g.transpose(s)?;
    let dot = g.matmul(w, st)?;
    let scaled = g.scale(dot, 1.0 / poly_m as f64);
    g.reshape(scaled, vec![1])
}

/// `M_F[i, j] = score_pair(words[i], glosses[j])` for a square batch.
pub fn fusion_matrix(g: &mut Graph, words: &[Var], glosses: &[Var]) -> Result<Var> {
    if words.len() != glosses.len() {
        return Err(Error::Batch(format!(
            "{} word representations but {} gloss representations",
            words.len(),
            glosses.len()
        )));
    }
    score_matrix(g, words, glosses)
}

/// Rectangular variant used for candidate scoring: one row per word
/// representation, one column per gloss representation.
pub(crate) fn score_matrix(g: &mut Graph, words: &[Var], glosses: &[Var]) -> Result<Var> {
    let first = *words
        .first()
        .ok_or_else(|| Error::Batch("empty batch".into()))?;
    for &v in words.iter().chain(glosses) {
        check_same_shape(g, first, v)?;
    }
    let poly_m = g.shape(first)[0];
    let w_rows = words
        .iter()
        .map(|&w| flatten_row(g, w))
        .collect::<Result<Vec<_>>>()?;
    let s_rows = glosses
        .iter()
        .map(|&s| flatten_row(g, s))
        .collect::<Result<Vec<_>>>()?;
    let w = g.concat(&w_rows, 0)?;
    let s = g.concat(&s_rows, 0)?;
    let st = g.transpose(s)?;
    let dot = g.matmul(w, st)?;
    Ok(g.scale(dot, 1.0 / poly_m as f64))
}
