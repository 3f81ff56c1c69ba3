//! Gold key files (`instance_id sense_id [sense_id ...]`) and prediction
//! files (`instance_id<TAB>sense_id`).

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Gold senses per instance, in file order. An instance may list several
/// acceptable senses; any of them counts as correct.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GoldKey {
    order: Vec<String>,
    senses: HashMap<String, Vec<String>>,
}

impl GoldKey {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: &str, senses: Vec<String>) -> Result<()> {
        if senses.is_empty() {
            return Err(Error::Scoring(format!("gold entry {id} has no sense")));
        }
        if self.senses.insert(id.to_string(), senses).is_some() {
            return Err(Error::Scoring(format!("duplicate gold entry {id}")));
        }
        self.order.push(id.to_string());
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[String]> {
        self.senses.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }
}

pub fn parse_gold(text: &str, origin: &Path) -> Result<GoldKey> {
    let mut key = GoldKey::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(id) = parts.next() else { continue };
        let senses: Vec<String> = parts.map(str::to_string).collect();
        if senses.is_empty() {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                reason: "expected `instance_id sense_id`".into(),
            });
        }
        key.insert(id, senses).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
    }
    Ok(key)
}

pub fn load_gold(path: impl AsRef<Path>) -> Result<GoldKey> {
    let path = path.as_ref();
    parse_gold(&std::fs::read_to_string(path)?, path)
}

pub fn save_gold(path: impl AsRef<Path>, key: &GoldKey) -> Result<()> {
    let mut s = String::new();
    for id in key.ids() {
        s.push_str(id);
        for sense in key.get(id).unwrap_or_default() {
            s.push(' ');
            s.push_str(sense);
        }
        s.push('\n');
    }
    super::write_atomic(path.as_ref(), s.as_bytes())
}

/// Parses prediction lines. Duplicates are kept so the scorer can reject them.
pub fn parse_predictions(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(id), Some(sense), None) if !id.is_empty() && !sense.trim().is_empty() => {
                out.push((id.to_string(), sense.trim().to_string()))
            }
            _ => {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: i + 1,
                    reason: "expected `instance_id<TAB>sense_id`".into(),
                })
            }
        }
    }
    Ok(out)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    parse_predictions(&std::fs::read_to_string(path)?, path)
}

pub fn predictions_to_string(preds: &[(String, String)]) -> String {
    let mut s = String::new();
    for (id, sense) in preds {
        s.push_str(id);
        s.push('\t');
        s.push_str(sense);
        s.push('\n');
    }
    s
}

pub fn save_predictions(path: impl AsRef<Path>, preds: &[(String, String)]) -> Result<()> {
    super::write_atomic(path.as_ref(), predictions_to_string(preds).as_bytes())
}
