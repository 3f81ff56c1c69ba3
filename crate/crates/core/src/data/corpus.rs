use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Part-of-speech tags of the all-words evaluation breakdown.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pos {
    #[serde(rename = "NOUN")]
    Noun,
    #[serde(rename = "VERB")]
    Verb,
    #[serde(rename = "ADJ")]
    Adj,
    #[serde(rename = "ADV")]
    Adv,
}

impl Pos {
    pub const ALL: [Pos; 4] = [Pos::Noun, Pos::Verb, Pos::Adj, Pos::Adv];

    pub fn as_str(self) -> &'static str {
        match self {
            Pos::Noun => "NOUN",
            Pos::Verb => "VERB",
            Pos::Adj => "ADJ",
            Pos::Adv => "ADV",
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One disambiguation item.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusInstance {
    pub id: String,
    pub tokens: Vec<String>,
    pub target_index: usize,
    pub lemma: String,
    pub pos: Pos,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
}

impl CorpusInstance {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.target_index >= self.tokens.len() {
            return Err(format!(
                "target_index {} out of range for {} tokens",
                self.target_index,
                self.tokens.len()
            ));
        }
        Ok(())
    }
}

pub fn parse_corpus(text: &str, origin: &Path) -> Result<Vec<CorpusInstance>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            reason,
        };
        let inst: CorpusInstance =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        inst.validate().map_err(parse_err)?;
        out.push(inst);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusInstance>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_corpus(&text, path)
}

pub fn corpus_to_string(instances: &[CorpusInstance]) -> String {
    let mut s = String::new();
    for inst in instances {
        s.push_str(&serde_json::to_string(inst).expect("serializable"));
        s.push('\n');
    }
    s
}

pub fn save_corpus(path: impl AsRef<Path>, instances: &[CorpusInstance]) -> Result<()> {
    super::write_atomic(path.as_ref(), corpus_to_string(instances).as_bytes())
}
