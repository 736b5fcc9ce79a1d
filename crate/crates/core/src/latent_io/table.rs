use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use super::{normalize_concept, open, read_embeddings, EmbeddingKind, EmbeddingMatrix, LatentIoError};

/// Text embeddings of a superclass label `L` and of every composed prompt
/// `"L, C"` for the concepts `C` in `names`. Row `i` belongs to `names[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptEmbeddingTable {
    superclass_label: String,
    superclass_embedding: Vec<f32>,
    names: Vec<String>,
    embeddings: EmbeddingMatrix,
}

impl ConceptEmbeddingTable {
    /// Builds a table, normalizing names and collapsing duplicates onto their
    /// first occurrence. Returns the table and the number of collapsed rows.
    pub fn new(
        superclass_label: impl Into<String>,
        superclass_embedding: Vec<f32>,
        names: Vec<String>,
        embeddings: EmbeddingMatrix,
    ) -> Result<(Self, usize), LatentIoError> {
        if names.is_empty() {
            return Err(LatentIoError::EmptyTable);
        }
        if names.len() != embeddings.n() {
            return Err(LatentIoError::LengthMismatch {
                what: "concept names".into(),
                expected: embeddings.n(),
                actual: names.len(),
            });
        }
        if superclass_embedding.len() != embeddings.d() {
            return Err(LatentIoError::DimensionMismatch {
                expected: embeddings.d(),
                actual: superclass_embedding.len(),
            });
        }
        if let Some(p) = superclass_embedding.iter().position(|v| !v.is_finite()) {
            return Err(LatentIoError::NonFinite { row: 0, col: p });
        }

        let mut seen = HashSet::with_capacity(names.len());
        let mut keep = Vec::with_capacity(names.len());
        let mut kept_names = Vec::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            let key = normalize_concept(name);
            if key.is_empty() {
                return Err(LatentIoError::Parse {
                    line: i + 1,
                    message: "empty concept name".into(),
                });
            }
            if seen.insert(key.clone()) {
                keep.push(i);
                kept_names.push(key);
            }
        }
        let collapsed = names.len() - keep.len();
        let embeddings = if collapsed == 0 {
            embeddings
        } else {
            embeddings.select(&keep)?
        };
        Ok((
            Self {
                superclass_label: superclass_label.into(),
                superclass_embedding,
                names: kept_names,
                embeddings,
            },
            collapsed,
        ))
    }

    pub fn superclass_label(&self) -> &str {
        &self.superclass_label
    }

    pub fn superclass_embedding(&self) -> &[f32] {
        &self.superclass_embedding
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.d()
    }

    pub fn index_of(&self, concept: &str) -> Option<usize> {
        let key = normalize_concept(concept);
        self.names.iter().position(|n| *n == key)
    }

    pub fn embedding_of(&self, concept: &str) -> Option<&[f32]> {
        self.index_of(concept).map(|i| self.embeddings.row(i))
    }
}

/// One UTF-8 name per line; trailing `\r` is dropped.
pub fn parse_names<R: BufRead>(source: R) -> Result<Vec<String>, LatentIoError> {
    source
        .lines()
        .map(|l| l.map(|s| s.trim_end_matches('\r').to_string()).map_err(Into::into))
        .collect()
}

pub fn write_names<W: Write, S: AsRef<str>>(names: &[S], mut out: W) -> Result<(), LatentIoError> {
    for n in names {
        writeln!(out, "{}", n.as_ref())?;
    }
    out.flush()?;
    Ok(())
}

/// Loads a concept table from a CUBE1 file of prompt embeddings, its names
/// sidecar, and a single-row CUBE1 file holding the superclass embedding.
///
/// Returns the table and the number of duplicate rows collapsed.
pub fn load_concept_table(
    embeddings: &Path,
    names: &Path,
    superclass: &Path,
    superclass_label: &str,
) -> Result<(ConceptEmbeddingTable, usize), LatentIoError> {
    let m = read_embeddings(open(embeddings)?)?;
    let names = parse_names(open(names)?)?;
    let sup = read_embeddings(open(superclass)?)?;
    if sup.n() != 1 {
        return Err(LatentIoError::Shape(format!(
            "superclass file must hold exactly one row, found {}",
            sup.n()
        )));
    }
    if m.kind() != EmbeddingKind::Text || sup.kind() != EmbeddingKind::Text {
        log::warn!("concept table built from image-kind embeddings");
    }
    let (table, collapsed) = ConceptEmbeddingTable::new(superclass_label, sup.row(0).to_vec(), names, m)?;
    if collapsed > 0 {
        log::warn!("collapsed {collapsed} duplicate concept rows");
    }
    Ok((table, collapsed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(n: usize) -> EmbeddingMatrix {
        let rows: Vec<[f32; 2]> = (0..n).map(|i| [i as f32, 1.0]).collect();
        EmbeddingMatrix::from_rows(&rows, EmbeddingKind::Text).unwrap()
    }

    #[test]
    fn duplicate_names_collapse_to_first() {
        let (t, collapsed) =
            ConceptEmbeddingTable::new("person", vec![0.0, 0.0], vec!["hat".into(), "hat".into()], rows(2))
                .unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(collapsed, 1);
        assert_eq!(t.embeddings().row(0), &[0.0, 1.0]);
    }

    #[test]
    fn names_normalize_before_dedup() {
        let names = vec!["Water Tank".into(), "water  tank".into(), "Bird".into()];
        let (t, collapsed) = ConceptEmbeddingTable::new("object", vec![0.0, 0.0], names, rows(3)).unwrap();
        assert_eq!(collapsed, 1);
        assert_eq!(t.names(), ["water tank", "bird"]);
        assert_eq!(t.embedding_of("BIRD").unwrap(), &[2.0, 1.0]);
    }

    #[test]
    fn name_count_mismatch() {
        let err = ConceptEmbeddingTable::new("p", vec![0.0, 0.0], vec!["a".into()], rows(2)).unwrap_err();
        assert!(matches!(err, LatentIoError::LengthMismatch { .. }));
    }

    #[test]
    fn superclass_dimension_mismatch() {
        let err = ConceptEmbeddingTable::new("p", vec![0.0; 3], vec!["a".into()], rows(1)).unwrap_err();
        assert!(matches!(err, LatentIoError::DimensionMismatch { expected: 2, actual: 3 }));
    }

    #[test]
    fn empty_table() {
        let err = ConceptEmbeddingTable::new("p", vec![0.0; 2], vec![], rows(1)).unwrap_err();
        assert!(matches!(err, LatentIoError::EmptyTable));
    }
}
