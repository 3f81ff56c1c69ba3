//! Sense selection: score every candidate gloss and take the argmax, plus the
//! most-frequent-sense and first-sense baselines.

use std::collections::HashMap;

use crate::data::{Checkpoint, CorpusInstance, Pos, SenseInventory, Vocab};
use crate::error::{Error, Result};
use crate::fusion::score_pair;
use crate::model::{gloss_representation, word_representation, ModelConfig, ModelParams};
use crate::tensor::Graph;

/// Trained parameters with the configuration and vocabulary they belong to.
#[derive(Clone, Debug)]
pub struct WsdModel {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub vocab: Vocab,
}

impl WsdModel {
    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        Self {
            config: ckpt.config,
            params: ckpt.params,
            vocab: ckpt.vocab,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateScores {
    pub sense_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub chosen_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub instance_id: String,
    pub sense_id: String,
    pub gloss: Vec<String>,
    /// `None` for the baselines, which do not score.
    pub score: Option<f64>,
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax_first(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Scoring("no candidate scores".into()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Scoring(format!("candidate {i} has non-finite score {}", scores[i])));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Encodes the context once and every candidate gloss once, then scores each
/// pair.
pub fn score_candidates(
    inst: &CorpusInstance,
    inventory: &SenseInventory,
    model: &WsdModel,
) -> Result<CandidateScores> {
    let candidates = inventory.candidates(&inst.lemma, inst.pos)?;
    let cfg = &model.config;
    let mut g = Graph::new();
    let vars = model.params.bind(&mut g, false);
    let (context, target) = cfg.context_input(inst, &model.vocab)?;
    let word = word_representation(&mut g, cfg, &vars, &context, target)?;
    let mut scores = Vec::with_capacity(candidates.len());
    for s in candidates {
        let ids = cfg.gloss_input(&s.gloss, &model.vocab)?;
        let gloss = gloss_representation(&mut g, cfg, &vars, &ids)?;
        let v = score_pair(&mut g, word, gloss)?;
        scores.push(g.value(v).item()?);
    }
    let chosen_index = argmax_first(&scores)?;
    Ok(CandidateScores {
        sense_ids: candidates.iter().map(|s| s.id.clone()).collect(),
        scores,
        chosen_index,
    })
}

pub trait Predictor {
    fn predict(&self, inst: &CorpusInstance, inventory: &SenseInventory) -> Result<Prediction>;

    fn predict_all(
        &self,
        corpus: &[CorpusInstance],
        inventory: &SenseInventory,
    ) -> Result<Vec<Prediction>> {
        corpus.iter().map(|inst| self.predict(inst, inventory)).collect()
    }
}

fn prediction(
    inst: &CorpusInstance,
    inventory: &SenseInventory,
    index: usize,
    score: Option<f64>,
) -> Result<Prediction> {
    let s = &inventory.candidates(&inst.lemma, inst.pos)?[index];
    Ok(Prediction {
        instance_id: inst.id.clone(),
        sense_id: s.id.clone(),
        gloss: s.gloss.clone(),
        score,
    })
}

impl Predictor for WsdModel {
    fn predict(&self, inst: &CorpusInstance, inventory: &SenseInventory) -> Result<Prediction> {
        let cs = score_candidates(inst, inventory, self)?;
        prediction(inst, inventory, cs.chosen_index, Some(cs.scores[cs.chosen_index]))
    }
}

pub fn predict(
    inst: &CorpusInstance,
    inventory: &SenseInventory,
    model: &WsdModel,
) -> Result<Prediction> {
    model.predict(inst, inventory)
}

/// Always the first listed sense.
#[derive(Clone, Copy, Debug, Default)]
pub struct FirstSensePredictor;

impl Predictor for FirstSensePredictor {
    fn predict(&self, inst: &CorpusInstance, inventory: &SenseInventory) -> Result<Prediction> {
        prediction(inst, inventory, 0, None)
    }
}

/// Most frequent gold sense per (lemma, POS) in a training corpus.
#[derive(Clone, Debug, Default)]
pub struct MfsPredictor {
    counts: HashMap<(String, Pos), HashMap<String, usize>>,
}

impl MfsPredictor {
    /// Unlabelled instances are ignored.
    pub fn from_corpus(training: &[CorpusInstance]) -> Self {
        let mut counts: HashMap<(String, Pos), HashMap<String, usize>> = HashMap::new();
        for inst in training {
            if let Some(gold) = &inst.gold {
                *counts
                    .entry((inst.lemma.clone(), inst.pos))
                    .or_default()
                    .entry(gold.clone())
                    .or_default() += 1;
            }
        }
        Self { counts }
    }

    pub fn count(&self, lemma: &str, pos: Pos, sense_id: &str) -> usize {
        self.counts
            .get(&(lemma.to_string(), pos))
            .and_then(|c| c.get(sense_id))
            .copied()
            .unwrap_or(0)
    }
}

impl Predictor for MfsPredictor {
    fn predict(&self, inst: &CorpusInstance, inventory: &SenseInventory) -> Result<Prediction> {
        let candidates = inventory.candidates(&inst.lemma, inst.pos)?;
        let mut best = 0;
        let mut best_count = 0;
        for (i, s) in candidates.iter().enumerate() {
            let c = self.count(&inst.lemma, inst.pos, &s.id);
            if c > best_count {
                best = i;
                best_count = c;
            }
        }
        prediction(inst, inventory, best, None)
    }
}

/// `(instance id, sense id)` pairs for the predictions file.
pub fn prediction_lines(preds: &[Prediction]) -> Vec<(String, String)> {
    preds
        .iter()
        .map(|p| (p.instance_id.clone(), p.sense_id.clone()))
        .collect()
}
