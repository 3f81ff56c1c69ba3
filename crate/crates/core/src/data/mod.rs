//! Corpus, inventory, vocabulary, key-file and checkpoint I/O.
//!
//! Corpus and inventory files are UTF-8 JSON Lines, one record per line.
//! Blank lines are ignored.

pub mod checkpoint;
pub mod corpus;
pub mod inventory;
pub mod keys;
pub mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use corpus::{load_corpus, save_corpus, CorpusInstance, Pos};
pub use inventory::{load_inventory, save_inventory, SenseEntry, SenseInventory};
pub use keys::{load_gold, load_predictions, save_gold, save_predictions, GoldKey};
pub use vocab::{build_vocab, tokenize, Tokenized, Vocab};

use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// then renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
