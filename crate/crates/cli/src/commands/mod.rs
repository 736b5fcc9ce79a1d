mod eval;
mod mine;
mod score;
mod synth_check;
mod train;
mod undersample;

use std::io::{ErrorKind, Write};
use std::path::Path;

use cubic_core::latent_io::{load_concept_table, load_dataset};
use cubic_core::{ConceptEmbeddingTable, LabeledLatentDataset, Split};

use crate::config::{ConceptPaths, DatasetPaths};

pub use eval::eval;
pub use mine::mine;
pub use score::score;
pub use synth_check::synth_check;
pub use train::train;
pub use undersample::undersample;

fn load(paths: &DatasetPaths, split: Split) -> anyhow::Result<LabeledLatentDataset> {
    Ok(load_dataset(&paths.embeddings, &paths.labels, paths.flags.as_deref(), split)?)
}

fn load_table(paths: &ConceptPaths) -> anyhow::Result<ConceptEmbeddingTable> {
    let (table, collapsed) =
        load_concept_table(&paths.embeddings, &paths.names, &paths.superclass, &paths.superclass_label)?;
    if collapsed > 0 {
        log::warn!("{collapsed} duplicate concept names collapsed onto their first row");
    }
    Ok(table)
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

/// Writes to stdout, treating a closed pipe as success.
pub fn emit(bytes: &[u8]) -> std::io::Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(bytes).and_then(|()| out.flush()) {
        Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(e),
        _ => Ok(()),
    }
}
