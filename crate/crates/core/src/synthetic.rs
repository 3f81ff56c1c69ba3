//! Seeded synthetic corpora with cue words shared between a sense's gloss
//! and the contexts that use it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{CorpusInstance, GoldKey, Pos, SenseEntry, SenseInventory};
use crate::error::{Error, Result};

const LEMMAS: [&str; 12] = [
    "bank", "bass", "crane", "bat", "pitch", "seal", "spring", "match", "plant", "palm", "light",
    "fair",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub lemmas: usize,
    pub senses_per_lemma: usize,
    pub instances: usize,
    /// Filler words around the target and its cue.
    pub filler_words: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            lemmas: 10,
            senses_per_lemma: 3,
            instances: 50,
            filler_words: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub corpus: Vec<CorpusInstance>,
    pub inventory: SenseInventory,
}

impl SyntheticData {
    pub fn gold_key(&self) -> GoldKey {
        gold_key(&self.corpus)
    }
}

fn lemma_name(l: usize) -> String {
    match LEMMAS.get(l) {
        Some(s) => s.to_string(),
        None => format!("lemma{l}"),
    }
}

fn cue(l: usize, s: usize, k: usize) -> String {
    format!("cue{l}x{s}{}", ['a', 'b', 'c'][k % 3])
}

/// Instance `i` uses lemma `i % lemmas` and cycles through its senses, so
/// every sense appears once the corpus has `lemmas × senses` instances.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.lemmas == 0 || spec.senses_per_lemma == 0 {
        return Err(Error::Config("synthetic corpus needs lemmas and senses".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fillers: Vec<String> = (0..24).map(|i| format!("w{i}")).collect();

    let mut inventory = SenseInventory::new();
    for l in 0..spec.lemmas {
        let pos = Pos::ALL[l % Pos::ALL.len()];
        let senses = (0..spec.senses_per_lemma)
            .map(|s| SenseEntry {
                id: format!("{}%{}", lemma_name(l), s + 1),
                gloss: vec![cue(l, s, 0), cue(l, s, 1), "of".into(), cue(l, s, 2)],
            })
            .collect();
        inventory.insert(&lemma_name(l), pos, senses)?;
    }

    let mut corpus = Vec::with_capacity(spec.instances);
    for i in 0..spec.instances {
        let l = i % spec.lemmas;
        let s = (i / spec.lemmas) % spec.senses_per_lemma;
        let mut tokens: Vec<String> = (0..spec.filler_words)
            .map(|_| fillers.choose(&mut rng).expect("fillers").clone())
            .collect();
        let cues = [cue(l, s, rng.gen_range(0..3)), cue(l, s, rng.gen_range(0..3))];
        let at = rng.gen_range(0..=tokens.len());
        tokens.insert(at, lemma_name(l));
        let before = rng.gen_bool(0.5);
        let cue_at = if before { at } else { at + 1 };
        tokens.insert(cue_at, cues[0].clone());
        tokens.push(cues[1].clone());
        let target_index = if before { at + 1 } else { at };
        corpus.push(CorpusInstance {
            id: format!("syn.{i:04}"),
            tokens,
            target_index,
            lemma: lemma_name(l),
            pos: Pos::ALL[l % Pos::ALL.len()],
            gold: Some(format!("{}%{}", lemma_name(l), s + 1)),
        });
    }
    Ok(SyntheticData { corpus, inventory })
}

pub fn gold_key(corpus: &[CorpusInstance]) -> GoldKey {
    let mut key = GoldKey::new();
    for inst in corpus {
        if let Some(g) = &inst.gold {
            key.insert(&inst.id, vec![g.clone()])
                .expect("corpus ids are unique");
        }
    }
    key
}
