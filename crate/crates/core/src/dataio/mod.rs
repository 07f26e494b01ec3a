//! Interaction logs, content catalogs, sessions, negative sampling, the
//! synthetic generator and checkpoint files.

mod behaviors;
mod catalog;
mod checkpoint;
mod goodreads;
mod sampling;
mod synth;

pub use behaviors::{parse_behaviors, parse_behaviors_str, write_behaviors, Behavior, Impression};
pub use catalog::{parse_catalog, parse_catalog_str, write_catalog, Catalog};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use goodreads::{convert_goodreads, GoodreadsStats};
pub use sampling::{make_sessions, sample_negatives, stable_hash, TrainExample, UserHistory};
pub use synth::{bayes_auc, generate_synthetic, SynthConfig, SyntheticData};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
