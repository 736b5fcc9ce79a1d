//! Concept bias scores, ranking and task-relatedness filtering.
//!
//! A concept's score is the cosine between the probe's unit normal and the
//! shift its prompt induces on the superclass text embedding. Positive
//! scores push toward class 1, negative toward class 0.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latent_io::{normalize_concept, ConceptEmbeddingTable, LatentIoError};
use crate::probe::{LinearProbe, ProbeError};
use crate::scalar::{dot, norm, to_scalars, Scalar};

/// Template joining superclass label and concept into one prompt.
pub const PROMPT_TEMPLATE: &str = "{L}, {C}";

pub fn compose_prompt(superclass: &str, concept: &str) -> String {
    format!("{superclass}, {concept}")
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("concept indistinguishable from superclass")]
    ZeroShift,
    #[error("zero-norm concept embedding")]
    ZeroConcept,
    #[error("normal is not unit length (norm {0})")]
    NotUnit(f64),
    #[error("dimension mismatch: expected {expected}, found {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("empty concept table")]
    EmptyTable,
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Io(#[from] LatentIoError),
}

/// How the table rows were produced, and thus how the shift is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariant {
    /// Rows embed `"L, C"`; shift is row minus superclass.
    #[default]
    SuperclassFirst,
    /// Rows embed `"C, L"`; shift is row minus superclass.
    ConceptFirst,
    /// Rows embed the bare concept; the row itself is the direction.
    ConceptOnly,
}

impl std::fmt::Display for ScoreVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::SuperclassFirst => "superclass_first",
            Self::ConceptFirst => "concept_first",
            Self::ConceptOnly => "concept_only",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptScore<T> {
    pub concept: String,
    pub score: T,
    pub variant: ScoreVariant,
}

fn check_unit<T: Scalar>(normal: &[T]) -> Result<(), ScoreError> {
    let len = norm(normal).as_f64();
    if (len - 1.0).abs() > 1e-6 {
        return Err(ScoreError::NotUnit(len));
    }
    Ok(())
}

fn cosine_with_unit<T: Scalar>(normal: &[T], direction: &[T]) -> Option<T> {
    let len = norm(direction);
    if len == T::zero() {
        return None;
    }
    let c = dot(normal, direction) / len;
    Some(c.max(-T::one()).min(T::one()))
}

/// `n · (c − s) / ‖c − s‖` for unit `n`, superclass embedding `s` and
/// composed-prompt embedding `c`.
pub fn cubic_score<T: Scalar>(normal: &[T], superclass: &[T], concept: &[T]) -> Result<T, ScoreError> {
    if superclass.len() != normal.len() || concept.len() != normal.len() {
        return Err(ScoreError::DimensionMismatch {
            expected: normal.len(),
            actual: if superclass.len() != normal.len() {
                superclass.len()
            } else {
                concept.len()
            },
        });
    }
    check_unit(normal)?;
    let shift: Vec<T> = concept.iter().zip(superclass).map(|(&c, &s)| c - s).collect();
    cosine_with_unit(normal, &shift).ok_or(ScoreError::ZeroShift)
}

/// Scores computed for a table, plus concepts skipped for a zero shift.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOutcome<T> {
    pub scores: Vec<ConceptScore<T>>,
    pub skipped: Vec<String>,
}

pub fn score_table<T: Scalar>(
    probe: &LinearProbe<T>,
    table: &ConceptEmbeddingTable,
    variant: ScoreVariant,
) -> Result<ScoreOutcome<T>, ScoreError> {
    if table.dim() != probe.dim() {
        return Err(ScoreError::DimensionMismatch {
            expected: probe.dim(),
            actual: table.dim(),
        });
    }
    let normal = probe.normal_vector()?;
    score_with_normal(&normal, table, variant)
}

/// Same as [`score_table`] with an explicit unit normal.
pub fn score_with_normal<T: Scalar>(
    normal: &[T],
    table: &ConceptEmbeddingTable,
    variant: ScoreVariant,
) -> Result<ScoreOutcome<T>, ScoreError> {
    if table.is_empty() {
        return Err(ScoreError::EmptyTable);
    }
    if table.dim() != normal.len() {
        return Err(ScoreError::DimensionMismatch {
            expected: normal.len(),
            actual: table.dim(),
        });
    }
    check_unit(normal)?;
    let superclass: Vec<T> = to_scalars(table.superclass_embedding());
    let rows: Vec<Option<T>> = (0..table.len())
        .into_par_iter()
        .map(|i| {
            let row: Vec<T> = to_scalars(table.embeddings().row(i));
            match variant {
                ScoreVariant::ConceptOnly => cosine_with_unit(normal, &row),
                _ => {
                    let shift: Vec<T> = row.iter().zip(&superclass).map(|(&c, &s)| c - s).collect();
                    cosine_with_unit(normal, &shift)
                }
            }
        })
        .collect();

    let mut scores = Vec::with_capacity(rows.len());
    let mut skipped = Vec::new();
    for (name, score) in table.names().iter().zip(rows) {
        match score {
            Some(score) => scores.push(ConceptScore {
                concept: name.clone(),
                score,
                variant,
            }),
            None => skipped.push(name.clone()),
        }
    }
    if !skipped.is_empty() {
        log::warn!("skipped {} concepts with zero shift", skipped.len());
    }
    Ok(ScoreOutcome { scores, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Class1,
    Class0,
}

fn by_direction<T: Scalar>(direction: Direction) -> impl Fn(&ConceptScore<T>, &ConceptScore<T>) -> Ordering {
    move |a, b| {
        let primary = match direction {
            Direction::Class1 => b.score.partial_cmp(&a.score),
            Direction::Class0 => a.score.partial_cmp(&b.score),
        }
        .unwrap_or(Ordering::Equal);
        primary.then_with(|| a.concept.cmp(&b.concept))
    }
}

/// Top `k` toward `direction`: largest first for class 1, smallest first for
/// class 0, ties by concept name.
pub fn rank<T: Scalar>(scores: &[ConceptScore<T>], k: usize, direction: Direction) -> Vec<ConceptScore<T>> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(by_direction(direction));
    sorted.truncate(k);
    sorted
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub task_related: bool,
    pub confidence: f64,
}

/// Task-relatedness verdicts keyed by normalized concept name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterMap {
    verdicts: BTreeMap<String, FilterVerdict>,
}

#[derive(Deserialize)]
struct FilterRecord {
    concept: String,
    task_related: bool,
    confidence: f64,
}

impl FilterMap {
    pub fn insert(&mut self, concept: &str, verdict: FilterVerdict) {
        self.verdicts.insert(normalize_concept(concept), verdict);
    }

    pub fn get(&self, concept: &str) -> Option<&FilterVerdict> {
        self.verdicts.get(&normalize_concept(concept))
    }

    pub fn len(&self) -> usize {
        self.verdicts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verdicts.is_empty()
    }

    /// Reads `{"concept", "task_related", "confidence"}` JSON-lines. Lines
    /// that are not objects with a `concept` key (such as a metadata header)
    /// are skipped.
    pub fn parse_jsonl<R: BufRead>(source: R) -> Result<Self, LatentIoError> {
        let mut map = Self::default();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| LatentIoError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if value.get("concept").is_none() {
                continue;
            }
            let rec: FilterRecord = serde_json::from_value(value).map_err(|e| LatentIoError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if !(0.0..=1.0).contains(&rec.confidence) {
                return Err(LatentIoError::Parse {
                    line: i + 1,
                    message: format!("confidence {} outside [0, 1]", rec.confidence),
                });
            }
            map.insert(
                &rec.concept,
                FilterVerdict {
                    task_related: rec.task_related,
                    confidence: rec.confidence,
                },
            );
        }
        Ok(map)
    }

    /// Offline fallback: a concept is task-related when it contains any keyword.
    pub fn from_keywords<S: AsRef<str>, K: AsRef<str>>(concepts: &[S], keywords: &[K]) -> Self {
        let keywords: Vec<String> = keywords.iter().map(|k| normalize_concept(k.as_ref())).collect();
        let mut map = Self::default();
        for c in concepts {
            let key = normalize_concept(c.as_ref());
            let related = keywords.iter().any(|k| !k.is_empty() && key.contains(k.as_str()));
            map.verdicts.insert(
                key,
                FilterVerdict {
                    task_related: related,
                    confidence: 1.0,
                },
            );
        }
        map
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome<T> {
    pub kept: Vec<ConceptScore<T>>,
    pub removed: usize,
    /// Concepts without a verdict; they are kept.
    pub missing: usize,
}

/// Drops every concept the filter marks as task-related.
pub fn apply_filter<T: Scalar>(scores: &[ConceptScore<T>], filter: &FilterMap) -> FilterOutcome<T> {
    let mut kept = Vec::with_capacity(scores.len());
    let mut removed = 0;
    let mut missing = 0;
    for s in scores {
        match filter.get(&s.concept) {
            Some(v) if v.task_related => removed += 1,
            Some(_) => kept.push(s.clone()),
            None => {
                missing += 1;
                kept.push(s.clone());
            }
        }
    }
    FilterOutcome { kept, removed, missing }
}

/// Ranked concepts per bias direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptBiasReport<T> {
    pub superclass_label: String,
    pub variant: ScoreVariant,
    pub filter_applied: bool,
    pub toward_class1: Vec<ConceptScore<T>>,
    pub toward_class0: Vec<ConceptScore<T>>,
}

impl<T: Scalar> ConceptBiasReport<T> {
    pub fn build(
        scores: &[ConceptScore<T>],
        k: usize,
        superclass_label: &str,
        variant: ScoreVariant,
        filter_applied: bool,
    ) -> Self {
        Self {
            superclass_label: superclass_label.to_string(),
            variant,
            filter_applied,
            toward_class1: rank(scores, k, Direction::Class1),
            toward_class0: rank(scores, k, Direction::Class0),
        }
    }

    /// Plain-text table of both ranked lists.
    pub fn render_text(&self) -> String {
        let mut out = format!(
            "superclass: {}\nvariant: {}\nfilter applied: {}\n",
            self.superclass_label, self.variant, self.filter_applied
        );
        for (title, list) in [
            ("toward class 1", &self.toward_class1),
            ("toward class 0", &self.toward_class0),
        ] {
            out.push_str(&format!("\n{title}\n{:>4}  {:>9}  concept\n", "rank", "score"));
            for (i, s) in list.iter().enumerate() {
                out.push_str(&format!("{:>4}  {:>+9.5}  {}\n", i + 1, s.score.as_f64(), s.concept));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent_io::{EmbeddingKind, EmbeddingMatrix};
    use proptest::prelude::*;

    fn sc(c: &str, s: f64) -> ConceptScore<f64> {
        ConceptScore {
            concept: c.into(),
            score: s,
            variant: ScoreVariant::SuperclassFirst,
        }
    }

    fn table(rows: &[[f32; 2]], names: &[&str], sup: [f32; 2]) -> ConceptEmbeddingTable {
        let m = EmbeddingMatrix::from_rows(rows, EmbeddingKind::Text).unwrap();
        ConceptEmbeddingTable::new("person", sup.to_vec(), names.iter().map(|s| s.to_string()).collect(), m)
            .unwrap()
            .0
    }

    #[test]
    fn parallel_shift_scores_one() {
        let n = [0.6, 0.8];
        assert!((cubic_score::<f64>(&n, &[1.0, 1.0], &[1.6, 1.8]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_shift_scores_zero() {
        assert_eq!(cubic_score(&[0.6, 0.8], &[0.0, 0.0], &[-0.8, 0.6]).unwrap(), 0.0);
    }

    #[test]
    fn hand_cosine() {
        // independent route: angle between (0.6, 0.8) and (1, 1) via atan2
        let angle = (0.8f64).atan2(0.6) - (1.0f64).atan2(1.0);
        let s = cubic_score(&[0.6, 0.8], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((s - angle.cos()).abs() < 1e-12);
        assert!((s - 0.989_949_493_661_166_5).abs() < 1e-12);
    }

    #[test]
    fn zero_shift_is_an_error() {
        let err = cubic_score(&[1.0, 0.0], &[0.3, 0.3], &[0.3, 0.3]).unwrap_err();
        assert_eq!(err.to_string(), "concept indistinguishable from superclass");
    }

    #[test]
    fn non_unit_normal_is_rejected() {
        assert!(matches!(cubic_score(&[2.0, 0.0], &[0.0, 0.0], &[1.0, 0.0]), Err(ScoreError::NotUnit(_))));
    }

    #[test]
    fn table_scoring_and_skips() {
        let t = table(&[[1.0, 1.0], [0.0, 1.0], [0.0, 2.0]], &["hat", "same", "sky"], [0.0, 1.0]);
        let out = score_with_normal::<f64>(&[1.0, 0.0], &t, ScoreVariant::SuperclassFirst).unwrap();
        assert_eq!(out.skipped, ["same"]);
        assert_eq!(out.scores.len(), 2);
        assert_eq!(out.scores[0].concept, "hat");
        assert!((out.scores[0].score - 1.0).abs() < 1e-12);
        assert_eq!(out.scores[1].score, 0.0);
    }

    #[test]
    fn concept_only_uses_raw_rows() {
        let t = table(&[[0.0, 3.0]], &["hat"], [0.0, 3.0]);
        let out = score_with_normal(&[0.0, 1.0], &t, ScoreVariant::ConceptOnly).unwrap();
        assert_eq!(out.scores[0].score, 1.0);
        assert_eq!(out.scores[0].variant, ScoreVariant::ConceptOnly);
        let first = score_with_normal(&[0.0, 1.0], &t, ScoreVariant::SuperclassFirst).unwrap();
        assert_eq!(first.skipped, ["hat"]);
    }

    #[test]
    fn negated_normal_negates_table_scores() {
        let t = table(&[[1.0, 0.3], [-0.2, 0.9], [0.5, -0.5]], &["a", "b", "c"], [0.1, 0.2]);
        let n = [0.6f64, 0.8];
        let a = score_with_normal(&n, &t, ScoreVariant::SuperclassFirst).unwrap();
        let b = score_with_normal(&[-0.6, -0.8], &t, ScoreVariant::SuperclassFirst).unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            assert_eq!(x.score, -y.score);
        }
    }

    #[test]
    fn probe_route_matches_normal_route() {
        let t = table(&[[2.0, 1.0]], &["hat"], [1.0, 1.0]);
        let p = LinearProbe::<f64>::new(vec![3.0, 0.0], vec![0.0, 4.0]).unwrap();
        let s = score_table(&p, &t, ScoreVariant::SuperclassFirst).unwrap();
        assert!((s.scores[0].score + 0.6).abs() < 1e-12);
        let degenerate = LinearProbe::new(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            score_table(&degenerate, &t, ScoreVariant::SuperclassFirst),
            Err(ScoreError::Probe(ProbeError::Degenerate))
        ));
    }

    #[test]
    fn rank_examples() {
        let s = [sc("a", 0.9), sc("b", -0.8), sc("c", 0.1)];
        assert_eq!(rank(&s, 1, Direction::Class1)[0].concept, "a");
        assert_eq!(rank(&s, 1, Direction::Class0)[0].concept, "b");
        assert_eq!(rank(&s, 5, Direction::Class1).len(), 3);
        let c0: Vec<_> = rank(&s, 3, Direction::Class0).into_iter().map(|x| x.concept).collect();
        assert_eq!(c0, ["b", "c", "a"]);
    }

    #[test]
    fn rank_ties_break_by_name() {
        let s = [sc("b", 0.5), sc("a", 0.5)];
        assert_eq!(rank(&s, 1, Direction::Class1)[0].concept, "a");
        assert_eq!(rank(&s, 1, Direction::Class0)[0].concept, "a");
    }

    #[test]
    fn filter_examples() {
        let s = [sc("sunglasses", 0.9), sc("blonde hair", 0.7)];
        let mut f = FilterMap::default();
        f.insert("sunglasses", FilterVerdict { task_related: true, confidence: 0.97 });
        f.insert("blonde hair", FilterVerdict { task_related: false, confidence: 0.88 });
        let out = apply_filter(&s, &f);
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.kept[0].concept, "blonde hair");
        assert_eq!((out.removed, out.missing), (1, 0));

        let out = apply_filter(&s, &FilterMap::default());
        assert_eq!(out.kept, s);
        assert_eq!(out.missing, 2);

        let all = FilterMap::from_keywords(&["sunglasses", "blonde hair"], &["sunglasses", "hair"]);
        assert!(apply_filter(&s, &all).kept.is_empty());
    }

    #[test]
    fn filter_jsonl_parsing() {
        let src = "{\"threshold\": 0.5}\n{\"concept\":\"Sunglasses\",\"task_related\":true,\"confidence\":0.9}\n\n";
        let f = FilterMap::parse_jsonl(src.as_bytes()).unwrap();
        assert_eq!(f.len(), 1);
        assert!(f.get("sunglasses").unwrap().task_related);
        let bad = "{\"concept\":\"x\",\"task_related\":true,\"confidence\":1.5}";
        assert!(FilterMap::parse_jsonl(bad.as_bytes()).is_err());
    }

    #[test]
    fn report_lists_are_sorted() {
        let s = [sc("a", 0.9), sc("b", -0.8), sc("c", 0.1)];
        let r = ConceptBiasReport::build(&s, 2, "person", ScoreVariant::SuperclassFirst, false);
        assert_eq!(r.toward_class1.iter().map(|x| x.concept.as_str()).collect::<Vec<_>>(), ["a", "c"]);
        assert_eq!(r.toward_class0.iter().map(|x| x.concept.as_str()).collect::<Vec<_>>(), ["b", "c"]);
        assert!(r.render_text().contains("toward class 0"));
    }

    #[test]
    fn prompt_composition() {
        assert_eq!(compose_prompt("person", "Eyeglasses"), "person, Eyeglasses");
    }

    proptest! {
        #[test]
        fn rank_ignores_input_order(
            raw in proptest::collection::vec((0u8..6, -3i8..=3), 1..12),
            k in 1usize..8,
            rot in 0usize..12,
        ) {
            let mut seen = std::collections::HashSet::new();
            let scores: Vec<_> = raw
                .into_iter()
                .filter(|(n, _)| seen.insert(*n))
                .map(|(n, s)| sc(&format!("c{n}"), s as f64 / 3.0))
                .collect();
            let mut shuffled = scores.clone();
            let len = shuffled.len();
            shuffled.rotate_left(rot % len);
            shuffled.reverse();
            for dir in [Direction::Class1, Direction::Class0] {
                prop_assert_eq!(rank(&scores, k, dir), rank(&shuffled, k, dir));
            }
        }
    }
}
