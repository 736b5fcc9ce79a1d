//! Embedding files and dataset bundles.
//!
//! The binary format (`CUBE1`) is a 6-byte magic, one JSON header line and a
//! raw little-endian `f32` payload. Labels, concept flags and concept names
//! live in row-aligned sidecar text files.

mod cube;
mod dataset;
mod table;

use std::fs::File;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use cube::{read_embeddings, write_embeddings, EmbeddingKind, EmbeddingMatrix, MAGIC};
pub use dataset::{
    load_dataset, parse_flags, parse_labels, write_flags, write_labels, LabeledLatentDataset,
    Split,
};
pub use table::{load_concept_table, parse_names, write_names, ConceptEmbeddingTable};

#[derive(Debug, Error)]
pub enum LatentIoError {
    #[error("input not found: {}", .0.display())]
    InputNotFound(PathBuf),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("unrecognized format")]
    UnrecognizedFormat,
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("payload length mismatch: expected {expected} bytes, found {actual}")]
    PayloadLengthMismatch { expected: usize, actual: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("length mismatch for {what}: expected {expected}, found {actual}")]
    LengthMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("label outside {{0,1}} on line {line}: {value:?}")]
    InvalidLabel { line: usize, value: String },
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate concept {0:?}")]
    DuplicateConcept(String),
    #[error("training split must contain both labels")]
    SingleClass,
    #[error("empty concept table")]
    EmptyTable,
    #[error("dimension mismatch: expected {expected}, found {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Canonical form of a concept name: lowercase, underscores read as spaces,
/// surrounding whitespace trimmed, internal whitespace runs collapsed.
pub fn normalize_concept(name: &str) -> String {
    name.to_lowercase()
        .replace('_', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>, LatentIoError> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            Err(LatentIoError::InputNotFound(path.to_path_buf()))
        }
        Err(e) => Err(e.into()),
    }
}

/// Reads a CUBE1 file from disk.
pub fn read_embeddings_file(path: &Path) -> Result<EmbeddingMatrix, LatentIoError> {
    read_embeddings(open(path)?)
}
