use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::Pos;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SenseEntry {
    pub id: String,
    pub gloss: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct InventoryRecord {
    lemma: String,
    pos: Pos,
    senses: Vec<SenseEntry>,
}

/// Ordered candidate senses per (lemma, POS). The listed order is the
/// first-sense priority.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SenseInventory {
    entries: BTreeMap<(String, Pos), Vec<SenseEntry>>,
}

impl SenseInventory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, lemma: &str, pos: Pos, senses: Vec<SenseEntry>) -> Result<()> {
        if senses.is_empty() {
            return Err(Error::InventoryFormat(format!(
                "({lemma}, {pos}) has no senses"
            )));
        }
        let mut seen = HashSet::new();
        for s in &senses {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InventoryFormat(format!(
                    "duplicate sense id {} in ({lemma}, {pos})",
                    s.id
                )));
            }
            if s.gloss.is_empty() {
                return Err(Error::InventoryFormat(format!(
                    "sense {} of ({lemma}, {pos}) has an empty gloss",
                    s.id
                )));
            }
        }
        let key = (lemma.to_string(), pos);
        if self.entries.contains_key(&key) {
            return Err(Error::InventoryFormat(format!(
                "duplicate entry for ({lemma}, {pos})"
            )));
        }
        self.entries.insert(key, senses);
        Ok(())
    }

    pub fn candidates(&self, lemma: &str, pos: Pos) -> Result<&[SenseEntry]> {
        self.entries
            .get(&(lemma.to_string(), pos))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Inventory {
                lemma: lemma.to_string(),
                pos: pos.to_string(),
            })
    }

    /// Position of `sense_id` in the candidate list of (lemma, pos).
    pub fn index_of(&self, lemma: &str, pos: Pos, sense_id: &str) -> Option<usize> {
        self.candidates(lemma, pos)
            .ok()?
            .iter()
            .position(|s| s.id == sense_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Pos, &[SenseEntry])> {
        self.entries
            .iter()
            .map(|((l, p), s)| (l.as_str(), *p, s.as_slice()))
    }
}

pub fn parse_inventory(text: &str, origin: &Path) -> Result<SenseInventory> {
    let mut inv = SenseInventory::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            reason,
        };
        let rec: InventoryRecord =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        inv.insert(&rec.lemma, rec.pos, rec.senses)
            .map_err(|e| parse_err(e.to_string()))?;
    }
    Ok(inv)
}

pub fn load_inventory(path: impl AsRef<Path>) -> Result<SenseInventory> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_inventory(&text, path)
}

pub fn inventory_to_string(inv: &SenseInventory) -> String {
    let mut s = String::new();
    for (lemma, pos, senses) in inv.iter() {
        let rec = InventoryRecord {
            lemma: lemma.to_string(),
            pos,
            senses: senses.to_vec(),
        };
        s.push_str(&serde_json::to_string(&rec).expect("serializable"));
        s.push('\n');
    }
    s
}

pub fn save_inventory(path: impl AsRef<Path>, inv: &SenseInventory) -> Result<()> {
    super::write_atomic(path.as_ref(), inventory_to_string(inv).as_bytes())
}
