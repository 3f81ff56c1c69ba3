//! Acceptance report. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails. Lines are written straight to stdout so they show up
//! without `--nocapture`.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{bcl_gradcheck, gradcheck_fixture, rng, vocab_for};
use polywsd::data::{build_vocab, CorpusInstance, GoldKey};
use polywsd::eval::{compare_costs, run_fingerprint, score_f1, Fraction, RunMetrics};
use polywsd::fusion::{fusion_matrix, score_pair};
use polywsd::model::{gloss_representation, word_representation, ModelParams};
use polywsd::predict::{argmax_first, score_candidates, Predictor, WsdModel};
use polywsd::synthetic::{generate, SyntheticData, SyntheticSpec};
use polywsd::tensor::{Graph, Tensor};
use polywsd::train::{bcl_forward, Batch, ScoreMatrix, TrainMode, Trainer};
use polywsd::RunConfig;
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn report(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "acceptance {tag} {name}: {detail} [{secs:.2}s]");
    let _ = out.flush();
    outcome.is_ok()
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let f = gradcheck_fixture(0);
    let m = f.config.context_encoder.d_model;
    if m != 8 || f.config.context_encoder.n_layers != 1 || f.config.context_encoder.n_heads != 2 {
        return Err(format!("wrong configuration {:?}", f.config.context_encoder));
    }
    let rep = bcl_gradcheck(&f, 1e-4);
    let elapsed = start.elapsed();
    // Not part of the criterion: a smaller step separates truncation error
    // from a wrong analytic gradient when the check fails.
    let fine = bcl_gradcheck(&f, 1e-6);
    check(
        rep.max_rel_error < 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "h=1e-4 max relative error {:.3e} over {} coordinates in {:.1}s (need < 1e-4, < 60s); \
             at h=1e-6 {:.3e}",
            rep.max_rel_error,
            rep.coordinates,
            elapsed.as_secs_f64(),
            fine.max_rel_error
        ),
    )
}

/// Picks `b` instances with pairwise distinct gold senses.
fn distinct_gold_batch(data: &SyntheticData, b: usize) -> Vec<&CorpusInstance> {
    let mut seen = std::collections::HashSet::new();
    data.corpus
        .iter()
        .filter(|i| seen.insert(i.gold.clone()))
        .take(b)
        .collect()
}

fn loss_calibration() -> Outcome {
    let data = generate(&SyntheticSpec {
        instances: 40,
        ..SyntheticSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let vocab = vocab_for(&data.corpus, &data.inventory);
    let config = RunConfig::desk().model_for_vocab(vocab.len());
    let mut params = ModelParams::init(&config, 11).map_err(|e| e.to_string())?;
    params.fusion.w_o.data_mut().fill(0.0);
    let mut worst = 0.0f64;
    for b in [2usize, 4, 8] {
        let batch = Batch::new(distinct_gold_batch(&data, b), &data.inventory).map_err(|e| e.to_string())?;
        let mut g = Graph::new();
        let vars = params.bind(&mut g, false);
        let fwd = bcl_forward(&mut g, &config, &vars, &vocab, &batch).map_err(|e| e.to_string())?;
        worst = worst.max((fwd.value.value - (b as f64).ln()).abs());
    }
    check(worst < 1e-9, format!("max |L - ln b| over b in {{2,4,8}} = {worst:.2e} (need < 1e-9)"))
}

fn overfit_capacity() -> Outcome {
    let start = Instant::now();
    let data = generate(&SyntheticSpec {
        lemmas: 10,
        senses_per_lemma: 3,
        instances: 50,
        ..SyntheticSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let run = RunConfig::desk();
    if run.train.epochs != 200 {
        return Err(format!("desk preset trains {} epochs, expected 200", run.train.epochs));
    }
    let vocab = build_vocab(&data.corpus, &data.inventory, run.train.min_freq).map_err(|e| e.to_string())?;
    let mut t = Trainer::new(run.model(), vocab, run.train).map_err(|e| e.to_string())?;
    t.run(&data.corpus, &data.inventory, TrainMode::Bcl, None, |_| {})
        .map_err(|e| e.to_string())?;
    let model = WsdModel::from_checkpoint(t.checkpoint());
    let preds = model
        .predict_all(&data.corpus, &data.inventory)
        .map_err(|e| e.to_string())?;
    let correct = preds
        .iter()
        .zip(&data.corpus)
        .filter(|(p, i)| i.gold.as_deref() == Some(p.sense_id.as_str()))
        .count();
    let acc = correct as f64 / data.corpus.len() as f64;
    let elapsed = start.elapsed();
    check(
        acc >= 0.95 && elapsed < Duration::from_secs(300),
        format!(
            "training accuracy {correct}/{} = {acc:.3} after {} steps in {:.1}s (need >= 0.95, < 300s)",
            data.corpus.len(),
            t.step,
            elapsed.as_secs_f64()
        ),
    )
}

fn cost_reduction() -> Outcome {
    let data = generate(&SyntheticSpec {
        lemmas: 10,
        senses_per_lemma: 3,
        instances: 50,
        ..SyntheticSpec::default()
    })
    .map_err(|e| e.to_string())?;
    for inst in &data.corpus {
        let m = data.inventory.candidates(&inst.lemma, inst.pos).map(|c| c.len()).ok();
        if m != Some(3) {
            return Err(format!("{} has {m:?} candidates", inst.id));
        }
    }
    let mut run = RunConfig::desk();
    run.train.epochs = 3;
    let vocab = build_vocab(&data.corpus, &data.inventory, run.train.min_freq).map_err(|e| e.to_string())?;
    let mut metrics = Vec::new();
    for mode in [TrainMode::Bcl, TrainMode::AllCandidates] {
        let mut t = Trainer::new(run.model(), vocab.clone(), run.train).map_err(|e| e.to_string())?;
        let fp = run_fingerprint(&t.config, &t.train, &data.corpus, &data.inventory);
        let s = t
            .run(&data.corpus, &data.inventory, mode, None, |_| {})
            .map_err(|e| e.to_string())?;
        metrics.push(RunMetrics::new(&s, fp));
    }
    let c = compare_costs(&metrics[0], &metrics[1], 1).map_err(|e| e.to_string())?;
    let exact = c.gloss_forward_reduction == Fraction { num: 2, den: 3 };
    let faster = metrics[0].wall_seconds < metrics[1].wall_seconds;
    check(
        exact && faster,
        format!(
            "gloss-forward reduction {}/{} = {:.1}% ({} vs {}), wall {:.3}s vs {:.3}s (need exactly 2/3 and bcl faster)",
            c.gloss_forward_reduction.num,
            c.gloss_forward_reduction.den,
            100.0 * c.gloss_forward_reduction.value(),
            metrics[0].counts.gloss,
            metrics[1].counts.gloss,
            metrics[0].wall_seconds,
            metrics[1].wall_seconds
        ),
    )
}

fn gold4() -> GoldKey {
    let mut g = GoldKey::new();
    for i in 0..4 {
        g.insert(&format!("i{i}"), vec![format!("s{i}")]).unwrap();
    }
    g
}

fn lines(pairs: &[(usize, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|(i, s)| (format!("i{i}"), s.to_string())).collect()
}

fn scoring_oracle() -> Outcome {
    let gold = gold4();
    let cases = [
        (lines(&[(0, "s0"), (1, "s1"), (2, "s2"), (3, "wrong")]), 0.75),
        (lines(&[(0, "s0"), (1, "s1")]), 2.0 / 3.0),
        (Vec::new(), 0.0),
    ];
    let mut got = Vec::new();
    let mut ok = true;
    for (preds, want) in &cases {
        let f1 = score_f1(preds, &gold, None).map_err(|e| e.to_string())?.micro_f1;
        ok &= f1 == *want;
        got.push(format!("{f1}"));
    }
    check(ok, format!("F1 = [{}] (need exactly 0.75, 2/3, 0)", got.join(", ")))
}

fn random_square(r: &mut impl Rng, b: usize) -> Tensor {
    Tensor::new(vec![b, b], (0..b * b).map(|_| r.gen_range(-20.0..20.0)).collect()).unwrap()
}

fn invariance_suite() -> Outcome {
    const TRIALS: u64 = 100;
    let mut softmax_err = 0.0f64;
    let mut shift_err = 0.0f64;
    let mut perm_err = 0.0f64;
    for trial in 0..TRIALS {
        let mut r = rng(1000 + trial);
        let (rows, cols) = (r.gen_range(1..6), r.gen_range(1..9));
        let t = Tensor::new(
            vec![rows, cols],
            (0..rows * cols).map(|_| r.gen_range(-30.0..30.0)).collect(),
        )
        .unwrap();
        let p = t.row_softmax().map_err(|e| e.to_string())?;
        for i in 0..rows {
            softmax_err = softmax_err.max((p.row(i).iter().sum::<f64>() - 1.0).abs());
        }

        let b = r.gen_range(2..8);
        let m = random_square(&mut r, b);
        let c = r.gen_range(-100.0..100.0);
        let shifted = Tensor::new(vec![b, b], m.data().iter().map(|v| v + c).collect()).unwrap();
        let a = ScoreMatrix::new(m.clone(), vec![false; b * b]).unwrap().loss().unwrap();
        let s = ScoreMatrix::new(shifted, vec![false; b * b]).unwrap().loss().unwrap();
        shift_err = shift_err.max((a.value - s.value).abs());

        let mut perm: Vec<usize> = (0..b).collect();
        perm.shuffle(&mut r);
        let pm = (0..b * b).map(|k| m.data()[perm[k / b] * b + perm[k % b]]).collect();
        let pl = ScoreMatrix::new(Tensor::new(vec![b, b], pm).unwrap(), vec![false; b * b])
            .unwrap()
            .loss()
            .unwrap();
        perm_err = perm_err.max((a.value - pl.value).abs());
        for i in 0..b {
            perm_err = perm_err.max((pl.per_example[i] - a.per_example[perm[i]]).abs());
        }
    }

    let data = generate(&SyntheticSpec {
        instances: TRIALS as usize,
        ..SyntheticSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let vocab = vocab_for(&data.corpus, &data.inventory);
    let config = RunConfig::gradcheck().model_for_vocab(vocab.len());
    let mut argmax_flips = 0;
    for (trial, inst) in data.corpus.iter().enumerate() {
        let mut r = rng(5000 + trial as u64);
        let params = ModelParams::init(&config, trial as u64).map_err(|e| e.to_string())?;
        let factor = r.gen_range(0.01..100.0);
        let mut g = Graph::new();
        let vars = params.bind(&mut g, false);
        let (ctx, t) = config.context_input(inst, &vocab).map_err(|e| e.to_string())?;
        let word = word_representation(&mut g, &config, &vars, &ctx, t).map_err(|e| e.to_string())?;
        let scaled = g.scale(word, factor);
        let (mut plain, mut bigger) = (Vec::new(), Vec::new());
        for sense in data.inventory.candidates(&inst.lemma, inst.pos).unwrap() {
            let ids = config.gloss_input(&sense.gloss, &vocab).map_err(|e| e.to_string())?;
            let gl = gloss_representation(&mut g, &config, &vars, &ids).map_err(|e| e.to_string())?;
            let a = score_pair(&mut g, word, gl).map_err(|e| e.to_string())?;
            let b = score_pair(&mut g, scaled, gl).map_err(|e| e.to_string())?;
            plain.push(g.value(a).data()[0]);
            bigger.push(g.value(b).data()[0]);
        }
        if argmax_first(&plain).unwrap() != argmax_first(&bigger).unwrap() {
            argmax_flips += 1;
        }
    }
    check(
        softmax_err < 1e-9 && shift_err < 1e-9 && perm_err < 1e-12 && argmax_flips == 0,
        format!(
            "{TRIALS} trials each: softmax {softmax_err:.1e} (< 1e-9), shift {shift_err:.1e} (< 1e-9), \
             permutation {perm_err:.1e} (< 1e-12), argmax flips {argmax_flips}"
        ),
    )
}

fn small_trainer(data: &SyntheticData, seed: u64) -> Trainer {
    let vocab = vocab_for(&data.corpus, &data.inventory);
    let mut run = RunConfig::gradcheck();
    run.train.batch_size = 4;
    run.train.epochs = 3;
    run.train.seed = seed;
    Trainer::new(run.model(), vocab, run.train).unwrap()
}

fn determinism() -> Outcome {
    let data = generate(&SyntheticSpec {
        instances: 20,
        ..SyntheticSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let run = |t: &mut Trainer, max: Option<u64>, losses: &mut Vec<f64>| {
        t.run(&data.corpus, &data.inventory, TrainMode::Bcl, max, |r| losses.push(r.loss))
            .unwrap();
    };
    let (mut a, mut b) = (small_trainer(&data, 21), small_trainer(&data, 21));
    let mut full_losses = Vec::new();
    run(&mut a, None, &mut full_losses);
    run(&mut b, None, &mut Vec::new());
    let identical = a.checkpoint().to_bytes() == b.checkpoint().to_bytes();

    let cut = 6;
    let mut first = small_trainer(&data, 21);
    run(&mut first, Some(cut), &mut Vec::new());
    let ckpt = polywsd::data::Checkpoint::from_bytes(&first.checkpoint().to_bytes()).map_err(|e| e.to_string())?;
    let mut resumed = Trainer::from_checkpoint(ckpt).map_err(|e| e.to_string())?;
    let mut rest = Vec::new();
    run(&mut resumed, None, &mut rest);
    let next = rest.first().copied().unwrap_or(f64::NAN);
    let same_bits = next.to_bits() == full_losses[cut as usize].to_bits();
    check(
        identical && same_bits,
        format!(
            "checkpoints identical: {identical}; resumed step {} loss {next:e} vs uninterrupted {:e}",
            cut + 1,
            full_losses[cut as usize]
        ),
    )
}

fn cross_path() -> Outcome {
    let mut worst = 0.0f64;
    let mut fixtures = 0;
    for seed in 0..50u64 {
        let data = generate(&SyntheticSpec {
            lemmas: 4,
            senses_per_lemma: 2 + (seed % 3) as usize,
            instances: 4,
            filler_words: 3,
            seed,
        })
        .map_err(|e| e.to_string())?;
        let vocab = vocab_for(&data.corpus, &data.inventory);
        let config = RunConfig::gradcheck().model_for_vocab(vocab.len());
        let model = WsdModel {
            params: ModelParams::init(&config, seed + 77).map_err(|e| e.to_string())?,
            config,
            vocab,
        };
        let inst = &data.corpus[(seed % 4) as usize];
        let cs = score_candidates(inst, &data.inventory, &model).map_err(|e| e.to_string())?;
        let mut g = Graph::new();
        let vars = model.params.bind(&mut g, false);
        let (ctx, t) = model.config.context_input(inst, &model.vocab).map_err(|e| e.to_string())?;
        let word = word_representation(&mut g, &model.config, &vars, &ctx, t).map_err(|e| e.to_string())?;
        let mut glosses = Vec::new();
        for s in data.inventory.candidates(&inst.lemma, inst.pos).unwrap() {
            let ids = model.config.gloss_input(&s.gloss, &model.vocab).map_err(|e| e.to_string())?;
            glosses.push(gloss_representation(&mut g, &model.config, &vars, &ids).map_err(|e| e.to_string())?);
        }
        let m = glosses.len();
        let mf = fusion_matrix(&mut g, &vec![word; m], &glosses).map_err(|e| e.to_string())?;
        if cs.scores.len() != m {
            return Err(format!("fixture {seed}: {} scores for {m} glosses", cs.scores.len()));
        }
        for (k, v) in g.value(mf).data().iter().enumerate() {
            worst = worst.max((v - cs.scores[k % m]).abs());
        }
        fixtures += 1;
    }
    check(
        worst < 1e-12,
        format!("max |score - matrix entry| over {fixtures} fixtures = {worst:.1e} (need < 1e-12)"),
    )
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("gradient fidelity", gradient_fidelity),
        ("loss calibration", loss_calibration),
        ("overfit capacity", overfit_capacity),
        ("cost reduction", cost_reduction),
        ("scoring oracle", scoring_oracle),
        ("invariance suite", invariance_suite),
        ("determinism", determinism),
        ("cross-path consistency", cross_path),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        if !report(name, f) {
            failed.push(name);
        }
    }
    // Full-scale F1 needs a large pretrained encoder, a sense-annotated
    // corpus and a full lexical inventory; the criteria above stand in.
    report("full-scale claims (substituted)", || {
        check(
            failed.is_empty(),
            "full-scale F1 is out of desk scope; holds iff every substitute criterion passes".into(),
        )
    });
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
