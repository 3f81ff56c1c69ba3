//! All-words F1 scoring and training-cost accounting.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::corpus::corpus_to_string;
use crate::data::inventory::inventory_to_string;
use crate::data::{CorpusInstance, GoldKey, Pos, SenseInventory};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{ForwardCounts, TrainConfig, TrainMode, TrainSummary};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub attempted: u64,
    pub correct: u64,
    pub total_gold: u64,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.attempted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.total_gold)
    }

    /// Harmonic mean of precision and recall, written as
    /// `2·correct / (attempted + total_gold)`; zero when nothing was attempted.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.correct, self.attempted + self.total_gold)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosScore {
    pub f1: f64,
    pub counts: Counts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro_f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub per_pos: BTreeMap<Pos, PosScore>,
    pub counts: Counts,
}

/// Scores predictions against a gold key. With `corpus`, gold ids are joined
/// to their POS tags for the per-POS breakdown; every gold id must then
/// appear in the corpus.
pub fn score_f1(
    predictions: &[(String, String)],
    gold: &GoldKey,
    corpus: Option<&[CorpusInstance]>,
) -> Result<EvalReport> {
    let mut seen = HashSet::with_capacity(predictions.len());
    let mut predicted: HashMap<&str, &str> = HashMap::with_capacity(predictions.len());
    for (id, sense) in predictions {
        if gold.get(id).is_none() {
            return Err(Error::Scoring(format!("prediction for unknown instance {id}")));
        }
        if !seen.insert(id.as_str()) {
            return Err(Error::Scoring(format!("duplicate prediction for instance {id}")));
        }
        predicted.insert(id, sense);
    }

    let pos_of: Option<HashMap<&str, Pos>> =
        corpus.map(|c| c.iter().map(|i| (i.id.as_str(), i.pos)).collect());

    let mut counts = Counts::default();
    let mut by_pos: BTreeMap<Pos, Counts> = BTreeMap::new();
    for id in gold.ids() {
        let senses = gold.get(id).expect("id from key");
        let attempt = predicted.get(id);
        let hit = attempt.is_some_and(|s| senses.iter().any(|g| g == s));
        let bump = |c: &mut Counts| {
            c.total_gold += 1;
            c.attempted += u64::from(attempt.is_some());
            c.correct += u64::from(hit);
        };
        bump(&mut counts);
        if let Some(map) = &pos_of {
            let pos = map.get(id).ok_or_else(|| {
                Error::Scoring(format!("gold instance {id} missing from the corpus"))
            })?;
            bump(by_pos.entry(*pos).or_default());
        }
    }

    Ok(EvalReport {
        micro_f1: counts.f1(),
        precision: counts.precision(),
        recall: counts.recall(),
        per_pos: by_pos
            .into_iter()
            .map(|(p, c)| (p, PosScore { f1: c.f1(), counts: c }))
            .collect(),
        counts,
    })
}

/// Cost of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mode: TrainMode,
    /// Digest of model config, training config and data; runs are only
    /// comparable when these agree.
    pub fingerprint: String,
    pub steps: u64,
    pub counts: ForwardCounts,
    pub wall_seconds: f64,
}

impl RunMetrics {
    pub fn new(summary: &TrainSummary, fingerprint: String) -> Self {
        Self {
            mode: summary.mode,
            fingerprint,
            steps: summary.steps,
            counts: summary.counts,
            wall_seconds: summary.wall_seconds,
        }
    }
}

/// SHA-256 over model config, epochs, batch size, seed and data.
pub fn run_fingerprint(
    config: &ModelConfig,
    train: &TrainConfig,
    corpus: &[CorpusInstance],
    inventory: &SenseInventory,
) -> String {
    let mut h = Sha256::new();
    h.update(format!("{config:?}\n").as_bytes());
    h.update(
        format!(
            "epochs={} batch={} seed={} lr={:e}\n",
            train.epochs, train.batch_size, train.seed, train.learning_rate
        )
        .as_bytes(),
    );
    h.update(corpus_to_string(corpus).as_bytes());
    h.update(inventory_to_string(inventory).as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub mode: TrainMode,
    pub gloss_forwards: u64,
    pub context_forwards: u64,
    pub wall_seconds: f64,
    pub device_count: u32,
    pub gpu_hours_analog: f64,
    pub reduction_vs_baseline: Option<f64>,
}

impl CostReport {
    pub fn new(run: &RunMetrics, device_count: u32) -> Self {
        Self {
            mode: run.mode,
            gloss_forwards: run.counts.gloss,
            context_forwards: run.counts.context,
            wall_seconds: run.wall_seconds,
            device_count,
            gpu_hours_analog: f64::from(device_count) * run.wall_seconds.max(0.0) / 3600.0,
            reduction_vs_baseline: None,
        }
    }
}

/// Reduced fraction `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 {
            return Err(Error::Comparison("zero denominator".into()));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostComparison {
    pub candidate: CostReport,
    pub baseline: CostReport,
    /// `1 − candidate gloss forwards / baseline gloss forwards`.
    pub gloss_forward_reduction: Fraction,
    /// `1 − candidate wall / baseline wall`.
    pub wall_clock_reduction: f64,
}

/// Compares `candidate` (normally the contrastive run) against `baseline`
/// (the all-candidates run) over the same data and configuration.
pub fn compare_costs(
    candidate: &RunMetrics,
    baseline: &RunMetrics,
    device_count: u32,
) -> Result<CostComparison> {
    if candidate.fingerprint != baseline.fingerprint {
        return Err(Error::Comparison(format!(
            "runs differ in config or data ({} vs {})",
            candidate.fingerprint, baseline.fingerprint
        )));
    }
    if device_count == 0 {
        return Err(Error::Comparison("device_count must be at least 1".into()));
    }
    let (a, b) = (candidate.counts.gloss, baseline.counts.gloss);
    if a > b {
        return Err(Error::Comparison(format!(
            "candidate used more gloss forwards ({a}) than baseline ({b})"
        )));
    }
    let gloss_forward_reduction = Fraction::new(b - a, b)?;
    let wall_clock_reduction = if baseline.wall_seconds > 0.0 {
        1.0 - candidate.wall_seconds / baseline.wall_seconds
    } else {
        0.0
    };
    let mut cand = CostReport::new(candidate, device_count);
    cand.reduction_vs_baseline = Some(gloss_forward_reduction.value());
    Ok(CostComparison {
        candidate: cand,
        baseline: CostReport::new(baseline, device_count),
        gloss_forward_reduction,
        wall_clock_reduction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(entries: &[(&str, &str)]) -> GoldKey {
        let mut k = GoldKey::new();
        for (id, s) in entries {
            k.insert(id, vec![s.to_string()]).unwrap();
        }
        k
    }

    fn preds(entries: &[(&str, &str)]) -> Vec<(String, String)> {
        entries
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn three_of_four() {
        let g = key(&[("a", "x"), ("b", "x"), ("c", "x"), ("d", "x")]);
        let p = preds(&[("a", "x"), ("b", "x"), ("c", "x"), ("d", "y")]);
        let r = score_f1(&p, &g, None).unwrap();
        assert_eq!(r.micro_f1, 0.75);
        assert_eq!(r.precision, 0.75);
        assert_eq!(r.recall, 0.75);
    }

    #[test]
    fn half_coverage() {
        let g = key(&[("a", "x"), ("b", "x"), ("c", "x"), ("d", "x")]);
        let r = score_f1(&preds(&[("a", "x"), ("b", "x")]), &g, None).unwrap();
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 0.5);
        assert_eq!(r.micro_f1, 2.0 / 3.0);
    }

    #[test]
    fn nothing_attempted() {
        let g = key(&[("a", "x")]);
        let r = score_f1(&[], &g, None).unwrap();
        assert_eq!(r.micro_f1, 0.0);
        assert_eq!(r.precision, 0.0);
    }

    #[test]
    fn unknown_and_duplicate_ids_rejected() {
        let g = key(&[("a", "x")]);
        assert!(matches!(
            score_f1(&preds(&[("z", "x")]), &g, None),
            Err(Error::Scoring(_))
        ));
        assert!(matches!(
            score_f1(&preds(&[("a", "x"), ("a", "y")]), &g, None),
            Err(Error::Scoring(_))
        ));
    }

    #[test]
    fn fractions_reduce() {
        let f = Fraction::new(20, 30).unwrap();
        assert_eq!((f.num, f.den), (2, 3));
        assert_eq!(f.value(), 2.0 / 3.0);
        assert_eq!(Fraction::new(0, 5).unwrap().value(), 0.0);
        assert!(Fraction::new(1, 0).is_err());
    }

    fn run(mode: TrainMode, gloss: u64, wall: f64, fp: &str) -> RunMetrics {
        RunMetrics {
            mode,
            fingerprint: fp.into(),
            steps: 10,
            counts: ForwardCounts { context: 40, gloss },
            wall_seconds: wall,
        }
    }

    #[test]
    fn cost_comparison() {
        let c = compare_costs(
            &run(TrainMode::Bcl, 40, 1.0, "f"),
            &run(TrainMode::AllCandidates, 120, 2.0, "f"),
            1,
        )
        .unwrap();
        assert_eq!(c.gloss_forward_reduction, Fraction { num: 2, den: 3 });
        assert_eq!(c.wall_clock_reduction, 0.5);
        assert_eq!(c.baseline.gpu_hours_analog, 2.0 / 3600.0);

        let same = compare_costs(
            &run(TrainMode::Bcl, 40, 1.0, "f"),
            &run(TrainMode::AllCandidates, 40, 1.0, "f"),
            2,
        )
        .unwrap();
        assert_eq!(same.gloss_forward_reduction.num, 0);
        assert_eq!(same.candidate.gpu_hours_analog, 2.0 / 3600.0);

        assert!(matches!(
            compare_costs(
                &run(TrainMode::Bcl, 40, 1.0, "f"),
                &run(TrainMode::AllCandidates, 120, 2.0, "g"),
                1
            ),
            Err(Error::Comparison(_))
        ));
    }
}
