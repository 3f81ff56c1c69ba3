//! Batch contrastive training and the all-candidates ablation.
//!
//! In contrastive mode a batch of `b` instances is scored against the `b`
//! gold glosses of the same batch: row `i` of the `b × b` fusion matrix has
//! its correct sense on the diagonal and the other instances' gold glosses as
//! negatives. The loss is the mean of `−log softmax(row i)[i]`. Off-diagonal
//! entries whose gloss text equals the row's own gold gloss are masked out of
//! the softmax.
//!
//! The all-candidates mode instead encodes every candidate gloss of every
//! instance and takes a cross-entropy against the gold index.

use std::fmt;
use std::ops::AddAssign;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Checkpoint, CorpusInstance, SenseInventory, Vocab};
use crate::error::{Error, Result};
use crate::fusion::{fusion_matrix, score_matrix};
use crate::model::{gloss_representation, word_representation, ModelConfig, ModelParams, ModelVars};
use crate::optim::{adam_update, AdamConfig, AdamState};
use crate::tensor::{
    finite_diff_check, masked_softmax_in_place, GradCheckReport, Graph, ParamSet, Tensor, Var,
};

fn default_min_freq() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default = "AdamDefaults::beta1")]
    pub beta1: f64,
    #[serde(default = "AdamDefaults::beta2")]
    pub beta2: f64,
    #[serde(default = "AdamDefaults::eps")]
    pub eps: f64,
    pub seed: u64,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default = "default_min_freq")]
    pub min_freq: usize,
}

struct AdamDefaults;

impl AdamDefaults {
    fn beta1() -> f64 {
        AdamConfig::default().beta1
    }
    fn beta2() -> f64 {
        AdamConfig::default().beta2
    }
    fn eps() -> f64 {
        AdamConfig::default().eps
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            batch_size: 8,
            epochs: 5,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            seed: 0,
            grad_clip: None,
            min_freq: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2 for contrastive training, got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("learning_rate and eps must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        if self.min_freq == 0 {
            return Err(Error::Config("min_freq must be at least 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainMode {
    #[serde(rename = "bcl")]
    Bcl,
    #[serde(rename = "all-candidates")]
    AllCandidates,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Bcl => "bcl",
            TrainMode::AllCandidates => "all-candidates",
        })
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bcl" => Ok(TrainMode::Bcl),
            "all-candidates" => Ok(TrainMode::AllCandidates),
            other => Err(Error::Config(format!("unknown training mode {other:?}"))),
        }
    }
}

/// Encoder invocations performed during a step or a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardCounts {
    pub context: u64,
    pub gloss: u64,
}

impl AddAssign for ForwardCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.context += rhs.context;
        self.gloss += rhs.gloss;
    }
}

/// Instances with their gold glosses, aligned by index.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub instances: Vec<&'a CorpusInstance>,
    pub gold_glosses: Vec<&'a [String]>,
}

impl<'a> Batch<'a> {
    pub fn new(instances: Vec<&'a CorpusInstance>, inventory: &'a SenseInventory) -> Result<Self> {
        if instances.len() < 2 {
            return Err(Error::Batch(format!(
                "contrastive batches need at least 2 instances, got {}",
                instances.len()
            )));
        }
        let gold_glosses = instances
            .iter()
            .map(|inst| gold_entry(inst, inventory).map(|(_, gloss)| gloss))
            .collect::<Result<_>>()?;
        Ok(Self {
            instances,
            gold_glosses,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// `mask[i*b + j]` is set when `j ≠ i` and gloss `j` reads exactly like
    /// gloss `i`.
    pub fn duplicate_mask(&self) -> Vec<bool> {
        duplicate_gloss_mask(&self.gold_glosses)
    }
}

/// Candidate index and gloss of an instance's gold sense.
pub fn gold_entry<'a>(
    inst: &CorpusInstance,
    inventory: &'a SenseInventory,
) -> Result<(usize, &'a [String])> {
    let gold = inst.gold.as_deref().ok_or_else(|| Error::Data {
        instance: inst.id.clone(),
        reason: "no gold sense".into(),
    })?;
    let candidates = inventory.candidates(&inst.lemma, inst.pos).map_err(|e| Error::Data {
        instance: inst.id.clone(),
        reason: e.to_string(),
    })?;
    candidates
        .iter()
        .position(|s| s.id == gold)
        .map(|i| (i, candidates[i].gloss.as_slice()))
        .ok_or_else(|| Error::Data {
            instance: inst.id.clone(),
            reason: format!(
                "gold sense {gold} not among candidates of ({}, {})",
                inst.lemma, inst.pos
            ),
        })
}

pub fn duplicate_gloss_mask(glosses: &[&[String]]) -> Vec<bool> {
    let b = glosses.len();
    let mut mask = vec![false; b * b];
    for i in 0..b {
        for j in 0..b {
            mask[i * b + j] = i != j && glosses[i] == glosses[j];
        }
    }
    mask
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub per_example: Vec<f64>,
}

/// Batch fusion matrix with its masked row softmax and diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub m_f: Tensor,
    pub p: Tensor,
    pub p_d: Vec<f64>,
    pub mask: Vec<bool>,
}

impl ScoreMatrix {
    pub fn new(m_f: Tensor, mask: Vec<bool>) -> Result<Self> {
        let (r, c) = match m_f.shape() {
            [r, c] if r == c => (*r, *c),
            s => {
                return Err(Error::Batch(format!(
                    "fusion matrix must be square, got {s:?}"
                )))
            }
        };
        if mask.len() != r * c {
            return Err(Error::Batch(format!(
                "mask has {} entries for a {r}×{c} matrix",
                mask.len()
            )));
        }
        if (0..r).any(|i| mask[i * c + i]) {
            return Err(Error::Internal("diagonal entry masked".into()));
        }
        let mut p = m_f.data().to_vec();
        for i in 0..r {
            masked_softmax_in_place(&mut p[i * c..(i + 1) * c], &mask[i * c..(i + 1) * c]);
        }
        let p_d = (0..r).map(|i| p[i * c + i]).collect();
        Ok(Self {
            p: Tensor::new(vec![r, c], p)?,
            m_f,
            p_d,
            mask,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.m_f.rows()
    }

    pub fn loss(&self) -> Result<LossValue> {
        let mut g = Graph::new();
        let m = g.constant(self.m_f.clone());
        Ok(bcl_loss(&mut g, m, &self.mask)?.1)
    }
}

/// Mean of `−log P[i, i]` over rows of the masked row softmax of `m_f`,
/// computed as a fused log-softmax.
pub fn bcl_loss(g: &mut Graph, m_f: Var, mask: &[bool]) -> Result<(Var, LossValue)> {
    let b = g.shape(m_f)[0];
    if g.shape(m_f) != [b, b] {
        return Err(Error::Batch(format!(
            "fusion matrix must be square, got {:?}",
            g.shape(m_f)
        )));
    }
    let targets: Vec<usize> = (0..b).collect();
    let per = g.cross_entropy_rows(m_f, &targets, Some(mask))?;
    let loss = g.mean(per);
    let value = LossValue {
        value: g.value(loss).item()?,
        per_example: g.value(per).data().to_vec(),
    };
    Ok((loss, value))
}

/// Tokenized inputs for one instance.
#[derive(Clone, Debug)]
struct Prepared {
    context: Vec<usize>,
    target: usize,
}

fn prepare(config: &ModelConfig, vocab: &Vocab, inst: &CorpusInstance) -> Result<Prepared> {
    let (context, target) = config.context_input(inst, vocab)?;
    Ok(Prepared { context, target })
}

#[derive(Clone, Debug)]
pub struct BclForward {
    pub loss: Var,
    pub value: LossValue,
    pub scores: ScoreMatrix,
    pub counts: ForwardCounts,
}

/// Records the contrastive loss of a batch on `g`.
pub fn bcl_forward(
    g: &mut Graph,
    config: &ModelConfig,
    vars: &ModelVars,
    vocab: &Vocab,
    batch: &Batch<'_>,
) -> Result<BclForward> {
    let mut counts = ForwardCounts::default();
    let mut words = Vec::with_capacity(batch.len());
    for inst in &batch.instances {
        let p = prepare(config, vocab, inst)?;
        words.push(word_representation(g, config, vars, &p.context, p.target)?);
        counts.context += 1;
    }
    let mut glosses = Vec::with_capacity(batch.len());
    for gloss in &batch.gold_glosses {
        let ids = config.gloss_input(gloss, vocab)?;
        glosses.push(gloss_representation(g, config, vars, &ids)?);
        counts.gloss += 1;
    }
    let m_f = fusion_matrix(g, &words, &glosses)?;
    let mask = batch.duplicate_mask();
    let (loss, value) = bcl_loss(g, m_f, &mask)?;
    let scores = ScoreMatrix::new(g.value(m_f).clone(), mask)?;
    Ok(BclForward {
        loss,
        value,
        scores,
        counts,
    })
}

/// Records the all-candidates cross-entropy of a batch on `g`.
pub fn all_candidates_forward(
    g: &mut Graph,
    config: &ModelConfig,
    vars: &ModelVars,
    vocab: &Vocab,
    inventory: &SenseInventory,
    instances: &[&CorpusInstance],
) -> Result<(Var, LossValue, ForwardCounts)> {
    if instances.is_empty() {
        return Err(Error::Batch("empty batch".into()));
    }
    let mut counts = ForwardCounts::default();
    let mut losses = Vec::with_capacity(instances.len());
    for inst in instances {
        let (gold, _) = gold_entry(inst, inventory)?;
        let candidates = inventory.candidates(&inst.lemma, inst.pos)?;
        let p = prepare(config, vocab, inst)?;
        let word = word_representation(g, config, vars, &p.context, p.target)?;
        counts.context += 1;
        let mut reps = Vec::with_capacity(candidates.len());
        for s in candidates {
            let ids = config.gloss_input(&s.gloss, vocab)?;
            reps.push(gloss_representation(g, config, vars, &ids)?);
            counts.gloss += 1;
        }
        let logits = score_matrix(g, &[word], &reps)?;
        losses.push(g.cross_entropy_rows(logits, &[gold], None)?);
    }
    let per = g.concat(&losses, 0)?;
    let loss = g.mean(per);
    let value = LossValue {
        value: g.value(loss).item()?,
        per_example: g.value(per).data().to_vec(),
    };
    Ok((loss, value, counts))
}

/// Central-difference check of the full contrastive loss on one batch.
pub fn bcl_gradcheck(
    config: &ModelConfig,
    params: &ModelParams,
    vocab: &Vocab,
    batch: &Batch<'_>,
    h: f64,
) -> Result<GradCheckReport> {
    finite_diff_check(
        |g, p: &ModelParams| {
            let vars = p.bind(g, true);
            let fwd = bcl_forward(g, config, &vars, vocab, batch)?;
            Ok((fwd.loss, vars.vars()))
        },
        params,
        h,
    )
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            *g *= k;
        }
    }
    norm
}

/// Backward pass plus one Adam update over every model tensor.
fn apply_step(
    g: &mut Graph,
    loss: Var,
    value: &LossValue,
    vars: &ModelVars,
    params: &mut ModelParams,
    state: &mut AdamState,
    train: &TrainConfig,
    step: u64,
) -> Result<()> {
    if !value.value.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            param_norm: params.l2_norm(),
        });
    }
    g.backward(loss)?;
    let mut grads: Vec<Vec<f64>> = vars
        .vars()
        .into_iter()
        .map(|v| g.grad(v).map(<[f64]>::to_vec))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Internal("parameter without gradient".into()))?;
    if let Some(c) = train.grad_clip {
        clip_grad_norm(&mut grads, c);
    }
    adam_update(&mut params.tensors_mut(), &grads, state, &train.adam())
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: LossValue,
    pub counts: ForwardCounts,
}

/// One contrastive step: `b` context encodes, `b` gloss encodes, backward,
/// Adam update.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    config: &ModelConfig,
    params: &mut ModelParams,
    state: &mut AdamState,
    train: &TrainConfig,
    vocab: &Vocab,
    batch: &Batch<'_>,
    step: u64,
) -> Result<StepOutcome> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, true);
    let fwd = bcl_forward(&mut g, config, &vars, vocab, batch)?;
    apply_step(&mut g, fwd.loss, &fwd.value, &vars, params, state, train, step)?;
    Ok(StepOutcome {
        loss: fwd.value,
        counts: fwd.counts,
    })
}

/// One all-candidates step: every candidate gloss of every instance is encoded.
#[allow(clippy::too_many_arguments)]
pub fn train_all_candidates_step(
    config: &ModelConfig,
    params: &mut ModelParams,
    state: &mut AdamState,
    train: &TrainConfig,
    vocab: &Vocab,
    inventory: &SenseInventory,
    instances: &[&CorpusInstance],
    step: u64,
) -> Result<StepOutcome> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, true);
    let (loss, value, counts) =
        all_candidates_forward(&mut g, config, &vars, vocab, inventory, instances)?;
    apply_step(&mut g, loss, &value, &vars, params, state, train, step)?;
    Ok(StepOutcome {
        loss: value,
        counts,
    })
}

/// Instance order for an epoch: a shuffle seeded by the run seed on a
/// per-epoch ChaCha stream.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Consecutive chunks of `batch_size`; a trailing chunk with fewer than two
/// instances is dropped.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    epoch_order(n, seed, epoch)
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

pub fn steps_per_epoch(n: usize, batch_size: usize) -> u64 {
    let full = n / batch_size;
    let rest = n % batch_size;
    (full + usize::from(rest >= 2)) as u64
}

/// Per-step metrics record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    pub context_forwards: u64,
    pub gloss_forwards: u64,
    pub elapsed_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: TrainMode,
    pub steps: u64,
    pub counts: ForwardCounts,
    pub wall_seconds: f64,
    pub last_loss: Option<f64>,
}

/// Owns the model, optimizer state and step counter of a training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub vocab: Vocab,
    pub train: TrainConfig,
    pub adam: AdamState,
    pub step: u64,
}

impl Trainer {
    /// Fresh parameters initialized from `train.seed`.
    pub fn new(config: ModelConfig, vocab: Vocab, train: TrainConfig) -> Result<Self> {
        train.validate()?;
        let config = config.resolved(vocab.len());
        let params = ModelParams::init(&config, train.seed)?;
        let adam = AdamState::new(&params.tensors());
        Ok(Self {
            config,
            params,
            vocab,
            train,
            adam,
            step: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.train.validate()?;
        Ok(Self {
            config: ckpt.config,
            params: ckpt.params,
            vocab: ckpt.vocab,
            train: ckpt.train,
            adam: ckpt.adam,
            step: ckpt.step,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config,
            train: self.train,
            vocab: self.vocab.clone(),
            params: self.params.clone(),
            adam: self.adam.clone(),
            seed: self.train.seed,
            step: self.step,
        }
    }

    pub fn total_steps(&self, n_instances: usize) -> u64 {
        self.train.epochs as u64 * steps_per_epoch(n_instances, self.train.batch_size)
    }

    /// Trains from the current step to the end of the configured epochs, or
    /// for at most `max_steps` steps. `on_step` sees every step record.
    pub fn run(
        &mut self,
        corpus: &[CorpusInstance],
        inventory: &SenseInventory,
        mode: TrainMode,
        max_steps: Option<u64>,
        mut on_step: impl FnMut(&StepRecord),
    ) -> Result<TrainSummary> {
        let spe = steps_per_epoch(corpus.len(), self.train.batch_size);
        if spe == 0 {
            return Err(Error::Batch(format!(
                "corpus of {} instances yields no batch of at least 2",
                corpus.len()
            )));
        }
        let total = self.total_steps(corpus.len());
        let end = max_steps.map_or(total, |m| total.min(self.step + m));
        let start = Instant::now();
        let mut summary = TrainSummary {
            mode,
            steps: 0,
            counts: ForwardCounts::default(),
            wall_seconds: 0.0,
            last_loss: None,
        };
        let mut cached: Option<(u64, Vec<Vec<usize>>)> = None;
        while self.step < end {
            let epoch = self.step / spe;
            if cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
                cached = Some((
                    epoch,
                    epoch_batches(corpus.len(), self.train.batch_size, self.train.seed, epoch),
                ));
            }
            let batches = &cached.as_ref().expect("cached").1;
            let idx = &batches[(self.step % spe) as usize];
            let instances: Vec<&CorpusInstance> = idx.iter().map(|&i| &corpus[i]).collect();
            let outcome = match mode {
                TrainMode::Bcl => {
                    let batch = Batch::new(instances, inventory)?;
                    train_step(
                        &self.config,
                        &mut self.params,
                        &mut self.adam,
                        &self.train,
                        &self.vocab,
                        &batch,
                        self.step,
                    )?
                }
                TrainMode::AllCandidates => train_all_candidates_step(
                    &self.config,
                    &mut self.params,
                    &mut self.adam,
                    &self.train,
                    &self.vocab,
                    inventory,
                    &instances,
                    self.step,
                )?,
            };
            self.step += 1;
            summary.steps += 1;
            summary.counts += outcome.counts;
            summary.last_loss = Some(outcome.loss.value);
            on_step(&StepRecord {
                step: self.step,
                epoch,
                loss: outcome.loss.value,
                context_forwards: outcome.counts.context,
                gloss_forwards: outcome.counts.gloss,
                elapsed_seconds: start.elapsed().as_secs_f64(),
            });
        }
        summary.wall_seconds = start.elapsed().as_secs_f64();
        Ok(summary)
    }
}
