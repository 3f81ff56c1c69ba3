#![allow(dead_code)]

use polywsd::data::{build_vocab, CorpusInstance, Pos, SenseEntry, SenseInventory, Vocab};
use polywsd::model::{ModelConfig, ModelParams};
use polywsd::synthetic::{generate, SyntheticData, SyntheticSpec};
use polywsd::tensor::{finite_diff_check, GradCheckReport, Tensor};
use polywsd::train::{bcl_forward, Batch};
use polywsd::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|s| s.to_string()).collect()
}

/// Three-instance synthetic batch at the gradient-check configuration.
pub struct Fixture {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub vocab: Vocab,
    pub data: SyntheticData,
}

pub fn gradcheck_fixture(seed: u64) -> Fixture {
    let run = RunConfig::gradcheck();
    let data = generate(&SyntheticSpec {
        lemmas: 3,
        senses_per_lemma: 3,
        instances: run.train.batch_size,
        filler_words: 3,
        seed,
    })
    .unwrap();
    let vocab = build_vocab(&data.corpus, &data.inventory, 1).unwrap();
    let vocab_size = run.context_encoder.vocab_size;
    assert!(vocab.len() <= vocab_size, "vocab {} exceeds {vocab_size}", vocab.len());
    let config = run.model_for_vocab(vocab_size);
    let params = ModelParams::init(&config, seed).unwrap();
    Fixture {
        config,
        params,
        vocab,
        data,
    }
}

/// Finite-difference check of the full contrastive loss over every model
/// parameter.
pub fn bcl_gradcheck(f: &Fixture, h: f64) -> GradCheckReport {
    let refs: Vec<&CorpusInstance> = f.data.corpus.iter().collect();
    let batch = Batch::new(refs, &f.data.inventory).unwrap();
    finite_diff_check(
        |g, p: &ModelParams| {
            let vars = p.bind(g, true);
            let fwd = bcl_forward(g, &f.config, &vars, &f.vocab, &batch)?;
            Ok((fwd.loss, vars.vars()))
        },
        &f.params,
        h,
    )
    .unwrap()
}

/// One lemma whose candidate count is given, golds cycling over senses.
pub fn inventory_with(counts: &[(&str, usize)]) -> SenseInventory {
    let mut inv = SenseInventory::new();
    for (lemma, m) in counts {
        let senses = (0..*m)
            .map(|s| SenseEntry {
                id: format!("{lemma}%{}", s + 1),
                gloss: vec![format!("{lemma}g{s}"), "thing".into()],
            })
            .collect();
        inv.insert(lemma, Pos::Noun, senses).unwrap();
    }
    inv
}

pub fn instance(id: &str, lemma: &str, gold: usize) -> CorpusInstance {
    CorpusInstance {
        id: id.into(),
        tokens: words(&["the", lemma, "was", "near"]),
        target_index: 1,
        lemma: lemma.into(),
        pos: Pos::Noun,
        gold: Some(format!("{lemma}%{}", gold + 1)),
    }
}

/// Vocabulary covering every corpus and gloss token.
pub fn vocab_for(corpus: &[CorpusInstance], inv: &SenseInventory) -> Vocab {
    build_vocab(corpus, inv, 1).unwrap()
}

/// Small model config sized for `vocab`.
pub fn small_config(vocab: &Vocab) -> ModelConfig {
    RunConfig::gradcheck().model_for_vocab(vocab.len())
}
