//! One bias-evaluation cell: train a probe, measure the ground-truth bias of a
//! concept on the test split, and score the same concept from text.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{measure_bias, theta_of, BiasMeasurement, EvalError};
use crate::latent_io::{normalize_concept, ConceptEmbeddingTable, LabeledLatentDataset};
use crate::probe::{train, LinearProbe, ProbeError, TrainConfig, TrainLog};
use crate::scalar::to_scalars;
use crate::scorer::{cubic_score, ScoreError, ScoreVariant};

#[derive(Debug, Error)]
pub enum CellError {
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("concept {0:?} not in concept table")]
    NotInTable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub concept: String,
    pub k: u8,
    /// θ of the training split.
    pub theta: f64,
    pub delta_c: f64,
    pub cos_alpha: f64,
    pub measurement: BiasMeasurement<f64>,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

pub struct CellInputs<'a> {
    pub train: &'a LabeledLatentDataset,
    pub val: &'a LabeledLatentDataset,
    pub test: &'a LabeledLatentDataset,
    pub table: &'a ConceptEmbeddingTable,
    pub concept: &'a str,
    pub k: u8,
}

/// Concept score for a single named row of the table.
pub fn concept_score(
    probe: &LinearProbe<f64>,
    table: &ConceptEmbeddingTable,
    concept: &str,
    variant: ScoreVariant,
) -> Result<f64, CellError> {
    let row = table
        .embedding_of(concept)
        .ok_or_else(|| CellError::NotInTable(normalize_concept(concept)))?;
    let normal = probe.normal_vector()?;
    let row: Vec<f64> = to_scalars(row);
    let score = match variant {
        ScoreVariant::ConceptOnly => cubic_score(&normal, &vec![0.0; row.len()], &row)?,
        _ => cubic_score(&normal, &to_scalars::<f64>(table.superclass_embedding()), &row)?,
    };
    Ok(score)
}

pub fn run_cell(
    inputs: &CellInputs<'_>,
    cfg: &TrainConfig,
    variant: ScoreVariant,
) -> Result<(CellResult, LinearProbe<f64>, TrainLog), CellError> {
    let theta = theta_of(inputs.train, inputs.concept, inputs.k)?;
    let (probe, log) = train::<f64>(inputs.train, inputs.val, cfg)?;
    let predictions = probe.predict_matrix(inputs.test.embeddings())?;
    let measurement = measure_bias::<f64>(inputs.test, &predictions, inputs.concept)?;
    let cos_alpha = concept_score(&probe, inputs.table, inputs.concept, variant)?;
    let result = CellResult {
        concept: normalize_concept(inputs.concept),
        k: inputs.k,
        theta,
        delta_c: measurement.delta_c,
        cos_alpha,
        measurement,
        epochs_run: log.epochs_run,
        best_epoch: log.best_epoch,
    };
    Ok((result, probe, log))
}
