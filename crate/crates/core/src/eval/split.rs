use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{concept_flags, EvalError};
use crate::latent_io::{LabeledLatentDataset, Split};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    /// 60/20/20; test takes the remainder.
    fn default() -> Self {
        Self { train: 0.6, val: 0.2 }
    }
}

/// Seeded train/val/test split stratified over the four (label, concept) cells.
pub fn stratified_split(
    ds: &LabeledLatentDataset,
    concept: &str,
    fractions: SplitFractions,
    seed: u64,
) -> Result<(LabeledLatentDataset, LabeledLatentDataset, LabeledLatentDataset), EvalError> {
    let SplitFractions { train, val } = fractions;
    if !(train > 0.0 && val >= 0.0 && train + val <= 1.0) {
        return Err(EvalError::InvalidFractions);
    }
    let flags = concept_flags(ds, concept)?;
    let mut cells: [Vec<usize>; 4] = Default::default();
    for (i, (&y, &c)) in ds.labels().iter().zip(flags).enumerate() {
        cells[usize::from(y) * 2 + usize::from(c)].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for cell in &mut cells {
        cell.shuffle(&mut rng);
        let n = cell.len();
        let n_tr = ((n as f64 * train).round() as usize).min(n);
        let n_va = ((n as f64 * val).round() as usize).min(n - n_tr);
        tr.extend_from_slice(&cell[..n_tr]);
        va.extend_from_slice(&cell[n_tr..n_tr + n_va]);
        te.extend_from_slice(&cell[n_tr + n_va..]);
    }
    for part in [&mut tr, &mut va, &mut te] {
        part.sort_unstable();
    }
    Ok((
        ds.select(&tr, Split::Train)?,
        ds.select(&va, Split::Val)?,
        ds.select(&te, Split::Test)?,
    ))
}
