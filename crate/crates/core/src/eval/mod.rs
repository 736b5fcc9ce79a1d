//! Evaluation protocol: class/concept disagreement ratio, controlled
//! undersampling, subgroup rates, ground-truth bias, Spearman correlation and
//! TopK detection accuracy.

mod metrics;
mod split;
mod undersample;

use thiserror::Error;

use crate::latent_io::{normalize_concept, LabeledLatentDataset, LatentIoError};

pub use metrics::{
    average_ranks, delta_c, group_rates, measure_bias, pearson, spearman, topk_accuracy,
    true_extremes, BiasMeasurement, CellTally, GroupCounts, GroupRates, TopKCase,
};
pub use split::{stratified_split, SplitFractions};
pub use undersample::{undersample, Undersampled, UndersampleSpec};

/// θ grid used for the correlation sweeps.
pub const DEFAULT_THETA_GRID: [f64; 6] = [0.0, 0.05, 0.1, 0.15, 0.2, 0.4];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("concept {0:?} has no presence flags in the dataset")]
    MissingConcept(String),
    #[error("theta undefined: agreement group is empty")]
    ThetaUndefined,
    #[error("theta {target} unreachable: {reason}")]
    Unreachable { target: f64, reason: String },
    #[error("theta {0} outside [0, 1]")]
    InvalidTheta(f64),
    #[error("class {0} outside {{0,1}}")]
    InvalidClass(u8),
    #[error("empty subgroup {0}")]
    EmptySubgroup(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("correlation undefined: {0}")]
    CorrelationUndefined(&'static str),
    #[error("K must be at least 1")]
    InvalidK,
    #[error("no cases to average")]
    NoCases,
    #[error("invalid split fractions")]
    InvalidFractions,
    #[error(transparent)]
    Dataset(#[from] LatentIoError),
}

/// Row indices of the four (label, concept) cells relative to class `k`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct KCells {
    /// y = k and C present
    pub k_with: Vec<usize>,
    /// y ≠ k and C absent
    pub other_without: Vec<usize>,
    /// y = k and C absent
    pub k_without: Vec<usize>,
    /// y ≠ k and C present
    pub other_with: Vec<usize>,
}

impl KCells {
    pub fn agreement(&self) -> usize {
        self.k_with.len() + self.other_without.len()
    }

    pub fn disagreement(&self) -> usize {
        self.k_without.len() + self.other_with.len()
    }
}

pub(crate) fn concept_flags<'a>(ds: &'a LabeledLatentDataset, concept: &str) -> Result<&'a [bool], EvalError> {
    ds.flags(concept)
        .ok_or_else(|| EvalError::MissingConcept(normalize_concept(concept)))
}

pub(crate) fn k_cells(ds: &LabeledLatentDataset, concept: &str, k: u8) -> Result<KCells, EvalError> {
    if k > 1 {
        return Err(EvalError::InvalidClass(k));
    }
    let flags = concept_flags(ds, concept)?;
    let mut cells = KCells::default();
    for (i, (&y, &c)) in ds.labels().iter().zip(flags).enumerate() {
        let bucket = match (y == k, c) {
            (true, true) => &mut cells.k_with,
            (false, false) => &mut cells.other_without,
            (true, false) => &mut cells.k_without,
            (false, true) => &mut cells.other_with,
        };
        bucket.push(i);
    }
    Ok(cells)
}

/// `(disagreement, agreement)` sample counts for `concept` and class `k`.
pub fn theta_counts(ds: &LabeledLatentDataset, concept: &str, k: u8) -> Result<(usize, usize), EvalError> {
    let cells = k_cells(ds, concept, k)?;
    Ok((cells.disagreement(), cells.agreement()))
}

/// Class-concept disagreement ratio: samples where class `k` and concept
/// presence disagree, over samples where they agree.
pub fn theta_of(ds: &LabeledLatentDataset, concept: &str, k: u8) -> Result<f64, EvalError> {
    let (d, a) = theta_counts(ds, concept, k)?;
    if a == 0 {
        return Err(EvalError::ThetaUndefined);
    }
    Ok(d as f64 / a as f64)
}
