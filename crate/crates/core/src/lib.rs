//! Concept-embedding bias identification for linear probes trained on frozen
//! vision-language latents.
//!
//! The pipeline: load embeddings ([`latent_io`]), train a bias-free two-class
//! probe ([`probe`]), mine a concept lexicon from captions ([`lexicon`]),
//! score every concept by the cosine between the probe's decision normal and
//! the concept-driven shift of a superclass text embedding ([`scorer`]), and
//! validate scores against ground-truth bias on undersampled datasets
//! ([`eval`], [`synth`], [`pipeline`]).
//!
//! Numeric code is generic over [`Scalar`]; the aliases below pick `f64`,
//! which is what the command-line tool uses.

pub mod eval;
pub mod latent_io;
pub mod lexicon;
pub mod pipeline;
pub mod probe;
pub mod scalar;
pub mod scorer;
pub mod synth;

pub use scalar::Scalar;

pub use latent_io::{
    normalize_concept, ConceptEmbeddingTable, EmbeddingKind, EmbeddingMatrix, LabeledLatentDataset,
    LatentIoError, Split,
};
pub use probe::{LinearProbe, ProbeError, TrainConfig, TrainLog};
pub use scorer::{ConceptBiasReport, ConceptScore, FilterMap, ScoreError, ScoreVariant};

/// Double-precision probe, the default for training and scoring.
pub type Probe = probe::LinearProbe<f64>;
/// Single-precision probe.
pub type Probe32 = probe::LinearProbe<f32>;
pub type Score = scorer::ConceptScore<f64>;
pub type BiasReport = scorer::ConceptBiasReport<f64>;
pub type Rates = eval::GroupRates<f64>;
pub type Measurement = eval::BiasMeasurement<f64>;
