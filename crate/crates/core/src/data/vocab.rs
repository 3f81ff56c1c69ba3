//! Word-level vocabulary and tokenizer.

use std::collections::HashMap;

use super::corpus::CorpusInstance;
use super::inventory::SenseInventory;
use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;

pub const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
    min_freq: usize,
}

impl Vocab {
    /// Builds a vocabulary from the non-reserved tokens in id order,
    /// starting at id 4.
    pub fn from_tokens(words: Vec<String>, min_freq: usize) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self {
            tokens,
            ids,
            min_freq,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }
}

/// Corpus tokens seen at least `min_freq` times plus every gloss token, ids
/// assigned by descending frequency then lexicographically.
pub fn build_vocab(
    corpus: &[CorpusInstance],
    inventory: &SenseInventory,
    min_freq: usize,
) -> Result<Vocab> {
    if min_freq == 0 {
        return Err(Error::Config("min_freq must be at least 1".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut from_gloss: HashMap<&str, bool> = HashMap::new();
    for inst in corpus {
        for t in &inst.tokens {
            *counts.entry(t).or_default() += 1;
        }
    }
    for (_, _, senses) in inventory.iter() {
        for s in senses {
            for t in &s.gloss {
                *counts.entry(t).or_default() += 1;
                from_gloss.insert(t, true);
            }
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(t, c)| !RESERVED.contains(t) && (*c >= min_freq || from_gloss.contains_key(t)))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocab::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()).collect(), min_freq)
}

/// Marker-wrapped ids plus the target's position among the retained words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenized {
    pub ids: Vec<usize>,
    pub target: Option<usize>,
}

impl Tokenized {
    /// Ids between the start and end markers.
    pub fn word_ids(&self) -> &[usize] {
        &self.ids[1..self.ids.len() - 1]
    }
}

/// `[CLS] + ids + [SEP]`, truncated to `max_len`. With a target the window
/// is centred on it; otherwise the tail is dropped.
pub fn tokenize(
    words: &[String],
    vocab: &Vocab,
    max_len: usize,
    target: Option<usize>,
) -> Result<Tokenized> {
    if max_len < 3 {
        return Err(Error::Contract(format!("max_len must be at least 3, got {max_len}")));
    }
    if let Some(t) = target {
        if t >= words.len() {
            return Err(Error::Index {
                index: t,
                len: words.len(),
            });
        }
    }
    let cap = max_len - 2;
    let n = words.len();
    let start = match target {
        Some(t) if n > cap => t.saturating_sub(cap / 2).min(n - cap),
        _ => 0,
    };
    let end = (start + cap).min(n);
    let mut ids = Vec::with_capacity(end - start + 2);
    ids.push(CLS_ID);
    ids.extend(words[start..end].iter().map(|w| vocab.id(w)));
    ids.push(SEP_ID);
    Ok(Tokenized {
        ids,
        target: target.map(|t| t - start),
    })
}
