use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{normalize_concept, open, read_embeddings, EmbeddingKind, EmbeddingMatrix, LatentIoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Image embeddings with binary labels and optional per-concept presence flags.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLatentDataset {
    embeddings: EmbeddingMatrix,
    labels: Vec<u8>,
    concept_flags: BTreeMap<String, Vec<bool>>,
    split: Split,
}

impl LabeledLatentDataset {
    /// Flag names are normalized; a training split must contain both labels.
    pub fn new(
        embeddings: EmbeddingMatrix,
        labels: Vec<u8>,
        concept_flags: BTreeMap<String, Vec<bool>>,
        split: Split,
    ) -> Result<Self, LatentIoError> {
        let n = embeddings.n();
        if labels.len() != n {
            return Err(LatentIoError::LengthMismatch {
                what: "labels".into(),
                expected: n,
                actual: labels.len(),
            });
        }
        if let Some((i, &v)) = labels.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(LatentIoError::InvalidLabel {
                line: i + 1,
                value: v.to_string(),
            });
        }
        let mut flags = BTreeMap::new();
        for (name, values) in concept_flags {
            let key = normalize_concept(&name);
            if values.len() != n {
                return Err(LatentIoError::LengthMismatch {
                    what: format!("flags for {key:?}"),
                    expected: n,
                    actual: values.len(),
                });
            }
            if flags.insert(key.clone(), values).is_some() {
                return Err(LatentIoError::DuplicateConcept(key));
            }
        }
        let ds = Self {
            embeddings,
            labels,
            concept_flags: flags,
            split,
        };
        if split == Split::Train && !ds.has_both_labels() {
            return Err(LatentIoError::SingleClass);
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.d()
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn concept_flags(&self) -> &BTreeMap<String, Vec<bool>> {
        &self.concept_flags
    }

    /// Presence flags for `concept`, looked up by normalized name.
    pub fn flags(&self, concept: &str) -> Option<&[bool]> {
        self.concept_flags
            .get(&normalize_concept(concept))
            .map(Vec::as_slice)
    }

    pub fn has_both_labels(&self) -> bool {
        self.labels.contains(&0) && self.labels.contains(&1)
    }

    /// Subset of rows, in the order given, tagged with `split`.
    pub fn select(&self, indices: &[usize], split: Split) -> Result<Self, LatentIoError> {
        let embeddings = self.embeddings.select(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let flags = self
            .concept_flags
            .iter()
            .map(|(k, v)| (k.clone(), indices.iter().map(|&i| v[i]).collect()))
            .collect();
        Self::new(embeddings, labels, flags, split)
    }

    pub fn with_split(mut self, split: Split) -> Result<Self, LatentIoError> {
        if split == Split::Train && !self.has_both_labels() {
            return Err(LatentIoError::SingleClass);
        }
        self.split = split;
        Ok(self)
    }
}

/// One ASCII `0`/`1` per line.
pub fn parse_labels<R: BufRead>(source: R) -> Result<Vec<u8>, LatentIoError> {
    let mut labels = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        match line.trim_end() {
            "0" => labels.push(0),
            "1" => labels.push(1),
            other => {
                return Err(LatentIoError::InvalidLabel {
                    line: i + 1,
                    value: other.to_string(),
                })
            }
        }
    }
    Ok(labels)
}

pub fn write_labels<W: Write>(labels: &[u8], mut out: W) -> Result<(), LatentIoError> {
    for l in labels {
        writeln!(out, "{l}")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct FlagRecord {
    concept: String,
    flags: Vec<u8>,
}

/// JSON-lines of `{"concept": ..., "flags": [0/1, ...]}`; names are normalized.
pub fn parse_flags<R: BufRead>(source: R) -> Result<BTreeMap<String, Vec<bool>>, LatentIoError> {
    let mut out = BTreeMap::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FlagRecord = serde_json::from_str(&line).map_err(|e| LatentIoError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let flags = rec
            .flags
            .iter()
            .map(|&f| match f {
                0 => Ok(false),
                1 => Ok(true),
                v => Err(LatentIoError::Parse {
                    line: i + 1,
                    message: format!("flag value {v} outside {{0,1}}"),
                }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let key = normalize_concept(&rec.concept);
        if out.insert(key.clone(), flags).is_some() {
            return Err(LatentIoError::DuplicateConcept(key));
        }
    }
    Ok(out)
}

pub fn write_flags<W: Write>(
    flags: &BTreeMap<String, Vec<bool>>,
    mut out: W,
) -> Result<(), LatentIoError> {
    for (concept, values) in flags {
        let rec = FlagRecord {
            concept: concept.clone(),
            flags: values.iter().map(|&b| u8::from(b)).collect(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Loads an image-embedding file with its labels and optional flags file.
pub fn load_dataset(
    embeddings: &Path,
    labels: &Path,
    flags: Option<&Path>,
    split: Split,
) -> Result<LabeledLatentDataset, LatentIoError> {
    let m = read_embeddings(open(embeddings)?)?;
    if m.kind() != EmbeddingKind::Image {
        log::warn!("{} holds text embeddings, loading as a dataset anyway", embeddings.display());
    }
    let labels = parse_labels(open(labels)?)?;
    let flags = match flags {
        Some(p) => parse_flags(open(p)?)?,
        None => BTreeMap::new(),
    };
    LabeledLatentDataset::new(m, labels, flags, split)
}
