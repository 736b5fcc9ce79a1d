//! Synthetic cross-modal latent spaces with planted class/concept
//! correlations and a modality gap.
//!
//! Image rows are `a(2y-1)·u_y + Σ b·u_C + σε` over the concepts present in
//! the sample. Text rows are `g` for the superclass and `g + b·u_C + (σ/10)ε`
//! for a concept, so a concept moves the text embedding along the same
//! direction it moves images.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{spearman, theta_of, EvalError};
use crate::latent_io::{
    normalize_concept, write_embeddings, write_flags, write_labels, write_names, ConceptEmbeddingTable,
    EmbeddingKind, EmbeddingMatrix, LabeledLatentDataset, LatentIoError, Split,
};
use crate::pipeline::{run_cell, CellError, CellInputs, CellResult};
use crate::probe::TrainConfig;
use crate::scorer::ScoreVariant;

/// Largest allowed |cos| between two planted concept directions.
pub const ORTHOGONALITY_BOUND: f64 = 0.3;
const MAX_REJECTIONS: usize = 100_000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error("infeasible cell counts: theta {theta} cannot be planted exactly in {n} samples")]
    Infeasible { theta: f64, n: usize },
    #[error("could not sample quasi-orthogonal directions in d={0}")]
    Orthogonality(usize),
    #[error(transparent)]
    Io(#[from] LatentIoError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("cell k={k} theta={theta}: {source}")]
    Cell {
        k: u8,
        theta: f64,
        #[source]
        source: CellError,
    },
}

/// A concept whose image presence is tied to class `k` at disagreement ratio `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Planted {
    pub concept: String,
    pub k: u8,
    pub theta: f64,
}

/// Unit directions and gap vector of a synthetic space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGeometry {
    pub class_direction: Vec<f64>,
    pub concept_directions: BTreeMap<String, Vec<f64>>,
    pub gap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub d: usize,
    /// Upper bound on rows per split.
    pub n: usize,
    pub class_gain: f64,
    pub concept_gain: f64,
    pub noise_sigma: f64,
    pub gap_norm: f64,
    /// The first entry fixes the labels; later entries only draw flags.
    pub correlation: Vec<Planted>,
    /// Text-only random concepts appended to the table.
    pub distractors: usize,
    /// θ of the test split for the first planted concept.
    pub test_theta: f64,
    pub superclass_label: String,
    pub seed: u64,
    /// Explicit geometry; sampled from `seed` when absent.
    pub geometry: Option<SynthGeometry>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            d: 64,
            n: 2000,
            class_gain: 0.5,
            concept_gain: 2.0,
            noise_sigma: 0.1,
            gap_norm: 1.0,
            correlation: vec![Planted {
                concept: "planted".into(),
                k: 1,
                theta: 0.0,
            }],
            distractors: 0,
            test_theta: 1.0,
            superclass_label: "object".into(),
            seed: 0,
            geometry: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub concept: String,
    pub k: u8,
    pub theta: f64,
    pub theta_test: f64,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train: LabeledLatentDataset,
    pub val: LabeledLatentDataset,
    pub test: LabeledLatentDataset,
    pub table: ConceptEmbeddingTable,
    pub truth: Vec<TruthRow>,
    pub geometry: SynthGeometry,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stable seed for one (concept, k, θ) cell.
pub fn cell_seed(base: u64, concept: &str, k: u8, theta: f64) -> u64 {
    // FNV-1a over the cell key, then mixed with the base seed
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    let key = normalize_concept(concept);
    for b in key.bytes().chain([k]).chain(theta.to_bits().to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01B3);
    }
    splitmix64(splitmix64(base) ^ h)
}

fn geometry_seed(base: u64) -> u64 {
    splitmix64(base ^ 0x6765_6F6D)
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, d);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit_avoiding(rng: &mut ChaCha8Rng, d: usize, avoid: &[&[f64]]) -> Result<Vec<f64>, SynthError> {
    for _ in 0..MAX_REJECTIONS {
        let u = unit(rng, d);
        if avoid.iter().all(|v| dot(&u, v).abs() < ORTHOGONALITY_BOUND) {
            return Ok(u);
        }
    }
    Err(SynthError::Orthogonality(d))
}

pub fn distractor_name(i: usize) -> String {
    format!("distractor {i:03}")
}

impl SynthGeometry {
    /// Samples the class direction, one direction per planted concept and
    /// per distractor, and a gap vector of norm `spec.gap_norm`.
    ///
    /// Planted directions are kept quasi-orthogonal to each other and to the
    /// class direction; distractors only to those.
    pub fn sample(spec: &SynthSpec) -> Result<Self, SynthError> {
        let d = spec.d;
        let mut rng = ChaCha8Rng::seed_from_u64(geometry_seed(spec.seed));
        let class_direction = unit(&mut rng, d);
        let mut planted: Vec<(String, Vec<f64>)> = Vec::new();
        for p in &spec.correlation {
            let u = {
                let mut avoid: Vec<&[f64]> = vec![&class_direction];
                avoid.extend(planted.iter().map(|(_, v)| v.as_slice()));
                unit_avoiding(&mut rng, d, &avoid)?
            };
            planted.push((normalize_concept(&p.concept), u));
        }
        let mut distractors = Vec::with_capacity(spec.distractors);
        {
            let mut avoid: Vec<&[f64]> = vec![&class_direction];
            avoid.extend(planted.iter().map(|(_, v)| v.as_slice()));
            for i in 0..spec.distractors {
                distractors.push((distractor_name(i), unit_avoiding(&mut rng, d, &avoid)?));
            }
        }
        let gap = unit(&mut rng, d).into_iter().map(|x| x * spec.gap_norm).collect();
        Ok(Self {
            class_direction,
            concept_directions: planted.into_iter().chain(distractors).collect(),
            gap,
        })
    }

    fn direction(&self, concept: &str) -> Result<&[f64], SynthError> {
        self.concept_directions
            .get(&normalize_concept(concept))
            .map(Vec::as_slice)
            .ok_or_else(|| SynthError::Invalid(format!("no direction for concept {concept:?}")))
    }

    fn validate(&self, spec: &SynthSpec) -> Result<(), SynthError> {
        let d = spec.d;
        let is_unit = |v: &[f64]| v.len() == d && (dot(v, v).sqrt() - 1.0).abs() < 1e-9;
        if !is_unit(&self.class_direction) {
            return Err(SynthError::Invalid("class direction must be a unit vector of length d".into()));
        }
        if self.gap.len() != d || self.gap.iter().any(|x| !x.is_finite()) {
            return Err(SynthError::Invalid("gap must be a finite vector of length d".into()));
        }
        for (name, v) in &self.concept_directions {
            if !is_unit(v) {
                return Err(SynthError::Invalid(format!("direction of {name:?} is not a unit vector of length d")));
            }
        }
        for (i, p) in spec.correlation.iter().enumerate() {
            let u = self.direction(&p.concept)?;
            for q in &spec.correlation[..i] {
                let c = dot(u, self.direction(&q.concept)?).abs();
                if c >= ORTHOGONALITY_BOUND {
                    return Err(SynthError::Invalid(format!(
                        "planted directions {:?} and {:?} have |cos| = {c:.3}",
                        q.concept, p.concept
                    )));
                }
            }
        }
        Ok(())
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Invalid(m.to_string()));
        if self.d < 2 {
            return bad("d must be at least 2");
        }
        if self.n < 4 {
            return bad("n must be at least 4");
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.class_gain) || !positive(self.concept_gain) {
            return bad("gains must be positive");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative");
        }
        if !(self.gap_norm.is_finite() && self.gap_norm >= 0.0) {
            return bad("gap_norm must be non-negative");
        }
        if self.correlation.is_empty() {
            return bad("at least one planted concept is required");
        }
        let mut names = std::collections::BTreeSet::new();
        for p in &self.correlation {
            if p.k > 1 {
                return bad("k must be 0 or 1");
            }
            if !(0.0..=1.0).contains(&p.theta) {
                return bad("theta must lie in [0, 1]");
            }
            let name = normalize_concept(&p.concept);
            if name.is_empty() || name.starts_with("distractor ") || !names.insert(name) {
                return bad("planted concept names must be unique, non-empty and not distractor names");
            }
        }
        if !(0.0..=1.0).contains(&self.test_theta) {
            return bad("test_theta must lie in [0, 1]");
        }
        if self.superclass_label.trim().is_empty() {
            return bad("superclass label must be non-empty");
        }
        Ok(())
    }

    /// Same spec with a single planted concept.
    pub fn with_cell(&self, k: u8, theta: f64) -> Self {
        let concept = self
            .correlation
            .first()
            .map_or_else(|| "planted".to_string(), |p| p.concept.clone());
        Self {
            correlation: vec![Planted { concept, k, theta }],
            ..self.clone()
        }
    }
}

/// Agreement/disagreement counts `(A, D)` with `D/A == theta` exactly and
/// `A + D <= n`, keeping as many samples as possible.
pub fn plant_counts(n: usize, theta: f64) -> Result<(usize, usize), SynthError> {
    let start = (n as f64 / (1.0 + theta)).floor() as usize;
    for a in (2..=start.min(n)).rev() {
        let d = (theta * a as f64).round() as usize;
        if a + d <= n && d as f64 / a as f64 == theta {
            return Ok((a, d));
        }
    }
    Err(SynthError::Infeasible { theta, n })
}

/// Disagreement count for a concept over fixed labels with `nk` rows of class
/// `k` and `no` rows of the other class.
fn secondary_disagreement(nk: usize, no: usize, theta: f64) -> Result<(usize, usize), SynthError> {
    let n = nk + no;
    let ideal = theta * n as f64 / (1.0 + theta);
    let mut candidates: Vec<usize> = (0..n).filter(|&d| d as f64 / (n - d) as f64 == theta).collect();
    candidates.sort_by(|&x, &y| (x as f64 - ideal).abs().total_cmp(&(y as f64 - ideal).abs()));
    for d in candidates {
        // split between (k, ¬C) and (¬k, C) as evenly as the class sizes allow
        let d1 = d.div_ceil(2).min(nk);
        let d2 = d - d1;
        if d2 <= no {
            return Ok((d1, d2));
        }
        let d2 = no;
        if d - d2 <= nk {
            return Ok((d - d2, d2));
        }
    }
    Err(SynthError::Infeasible { theta, n })
}

struct SplitRows {
    labels: Vec<u8>,
    flags: BTreeMap<String, Vec<bool>>,
}

fn plant_split(spec: &SynthSpec, theta: f64, rng: &mut ChaCha8Rng) -> Result<SplitRows, SynthError> {
    let primary = &spec.correlation[0];
    let (k, o) = (primary.k, 1 - primary.k);
    let (a, d) = plant_counts(spec.n, theta)?;
    let (a1, d1) = (a.div_ceil(2), d.div_ceil(2));
    let (a2, d2) = (a - a1, d - d1);
    let mut rows: Vec<(u8, bool)> = Vec::with_capacity(a + d);
    rows.extend(std::iter::repeat_n((k, true), a1));
    rows.extend(std::iter::repeat_n((o, false), a2));
    rows.extend(std::iter::repeat_n((k, false), d1));
    rows.extend(std::iter::repeat_n((o, true), d2));
    rows.shuffle(rng);

    let labels: Vec<u8> = rows.iter().map(|r| r.0).collect();
    let mut flags = BTreeMap::new();
    flags.insert(normalize_concept(&primary.concept), rows.iter().map(|r| r.1).collect());

    for p in &spec.correlation[1..] {
        let mut of_k: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == p.k).collect();
        let mut of_o: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != p.k).collect();
        let (dk, dother) = secondary_disagreement(of_k.len(), of_o.len(), p.theta)?;
        of_k.shuffle(rng);
        of_o.shuffle(rng);
        let mut f = vec![false; labels.len()];
        // class k rows carry the concept except the first dk; other-class rows only the first dother
        for &i in &of_k[dk..] {
            f[i] = true;
        }
        for &i in &of_o[..dother] {
            f[i] = true;
        }
        flags.insert(normalize_concept(&p.concept), f);
    }
    Ok(SplitRows { labels, flags })
}

fn image_rows(
    spec: &SynthSpec,
    geometry: &SynthGeometry,
    rows: SplitRows,
    split: Split,
    rng: &mut ChaCha8Rng,
) -> Result<LabeledLatentDataset, SynthError> {
    let d = spec.d;
    let directions: Vec<(&[bool], &[f64])> = rows
        .flags
        .iter()
        .map(|(name, f)| Ok((f.as_slice(), geometry.direction(name)?)))
        .collect::<Result<_, SynthError>>()?;
    let mut values = Vec::with_capacity(rows.labels.len() * d);
    let mut z = vec![0.0f64; d];
    for (i, &y) in rows.labels.iter().enumerate() {
        let sign = if y == 1 { 1.0 } else { -1.0 };
        for (zj, uj) in z.iter_mut().zip(&geometry.class_direction) {
            *zj = spec.class_gain * sign * uj;
        }
        for (flags, u) in &directions {
            if flags[i] {
                for (zj, uj) in z.iter_mut().zip(*u) {
                    *zj += spec.concept_gain * uj;
                }
            }
        }
        for zj in z.iter_mut() {
            *zj += spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
        }
        values.extend(z.iter().map(|&v| v as f32));
    }
    let m = EmbeddingMatrix::new(rows.labels.len(), d, values, EmbeddingKind::Image)?;
    Ok(LabeledLatentDataset::new(m, rows.labels, rows.flags, split)?)
}

fn text_table(
    spec: &SynthSpec,
    geometry: &SynthGeometry,
    rng: &mut ChaCha8Rng,
) -> Result<ConceptEmbeddingTable, SynthError> {
    let sigma = spec.noise_sigma / 10.0;
    let mut names: Vec<String> = spec.correlation.iter().map(|p| normalize_concept(&p.concept)).collect();
    names.extend(
        geometry
            .concept_directions
            .keys()
            .filter(|n| !names.contains(n))
            .cloned()
            .collect::<Vec<_>>(),
    );
    let mut values = Vec::with_capacity(names.len() * spec.d);
    for name in &names {
        let u = geometry.direction(name)?;
        for (g, uj) in geometry.gap.iter().zip(u) {
            let noise = sigma * rng.sample::<f64, _>(StandardNormal);
            values.push((g + spec.concept_gain * uj + noise) as f32);
        }
    }
    let m = EmbeddingMatrix::new(names.len(), spec.d, values, EmbeddingKind::Text)?;
    let superclass = geometry.gap.iter().map(|&g| g as f32).collect();
    let (table, _) = ConceptEmbeddingTable::new(spec.superclass_label.clone(), superclass, names, m)?;
    Ok(table)
}

/// Generates train/val/test splits and the concept table.
///
/// Train and val carry each planted θ exactly; the test split uses
/// `test_theta` for the first planted concept so that all four
/// (label, concept) groups are populated.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    let geometry = match &spec.geometry {
        Some(g) => g.clone(),
        None => SynthGeometry::sample(spec)?,
    };
    geometry.validate(spec)?;

    let primary = &spec.correlation[0];
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(spec.seed, &primary.concept, primary.k, primary.theta));
    let make = |theta: f64, split: Split, rng: &mut ChaCha8Rng| -> Result<LabeledLatentDataset, SynthError> {
        let rows = plant_split(spec, theta, rng)?;
        image_rows(spec, &geometry, rows, split, rng)
    };
    let train = make(primary.theta, Split::Train, &mut rng)?;
    let val = make(primary.theta, Split::Val, &mut rng)?;
    let test = make(spec.test_theta, Split::Test, &mut rng)?;
    let table = text_table(spec, &geometry, &mut rng)?;

    let truth = spec
        .correlation
        .iter()
        .map(|p| {
            Ok(TruthRow {
                concept: normalize_concept(&p.concept),
                k: p.k,
                theta: theta_of(&train, &p.concept, p.k)?,
                theta_test: theta_of(&test, &p.concept, p.k)?,
            })
        })
        .collect::<Result<_, SynthError>>()?;

    Ok(SynthOutput {
        train,
        val,
        test,
        table,
        truth,
        geometry,
    })
}

impl SynthOutput {
    /// Every artifact as `(file name, bytes)` in standard engine formats:
    /// `{train,val,test}.{cube,labels,flags.jsonl}`, `concepts.cube`,
    /// `concepts.names`, `superclass.cube` and `truth.json`.
    pub fn files(&self) -> Result<Vec<(String, Vec<u8>)>, SynthError> {
        let mut files = Vec::new();
        for ds in [&self.train, &self.val, &self.test] {
            let stem = ds.split().to_string();
            let mut cube = Vec::new();
            write_embeddings(ds.embeddings(), &mut cube)?;
            let mut labels = Vec::new();
            write_labels(ds.labels(), &mut labels)?;
            let mut flags = Vec::new();
            write_flags(ds.concept_flags(), &mut flags)?;
            files.push((format!("{stem}.cube"), cube));
            files.push((format!("{stem}.labels"), labels));
            files.push((format!("{stem}.flags.jsonl"), flags));
        }
        let mut cube = Vec::new();
        write_embeddings(self.table.embeddings(), &mut cube)?;
        files.push(("concepts.cube".into(), cube));
        let mut names = Vec::new();
        write_names(self.table.names(), &mut names)?;
        files.push(("concepts.names".into(), names));
        let sup = EmbeddingMatrix::new(
            1,
            self.table.dim(),
            self.table.superclass_embedding().to_vec(),
            EmbeddingKind::Text,
        )?;
        let mut cube = Vec::new();
        write_embeddings(&sup, &mut cube)?;
        files.push(("superclass.cube".into(), cube));
        let mut truth = serde_json::to_vec_pretty(&self.truth).map_err(|e| LatentIoError::Io(e.into()))?;
        truth.push(b'\n');
        files.push(("truth.json".into(), truth));
        Ok(files)
    }

    pub fn write_to_dir(&self, dir: &Path) -> Result<(), SynthError> {
        std::fs::create_dir_all(dir).map_err(LatentIoError::from)?;
        for (name, bytes) in self.files()? {
            std::fs::write(dir.join(name), bytes).map_err(LatentIoError::from)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub cells: Vec<CellResult>,
    pub spearman: f64,
}

/// Spearman(Δ_C, cos α_C) across cells.
pub fn cells_spearman(cells: &[CellResult]) -> Result<f64, EvalError> {
    let deltas: Vec<f64> = cells.iter().map(|c| c.delta_c).collect();
    let scores: Vec<f64> = cells.iter().map(|c| c.cos_alpha).collect();
    spearman(&deltas, &scores)
}

/// Runs one cell per (k, θ): generate, train, measure Δ_C on test, score
/// the planted concept. Cells share the geometry of `base.seed` and run in
/// parallel; results keep the k-major, θ-minor order.
pub fn correlation_experiment(
    base: &SynthSpec,
    ks: &[u8],
    thetas: &[f64],
    cfg: &TrainConfig,
    variant: ScoreVariant,
) -> Result<CorrelationReport, SynthError> {
    base.validate()?;
    let geometry = match &base.geometry {
        Some(g) => g.clone(),
        None => SynthGeometry::sample(&base.with_cell(ks.first().copied().unwrap_or(1), 0.0))?,
    };
    let grid: Vec<(u8, f64)> = ks.iter().flat_map(|&k| thetas.iter().map(move |&t| (k, t))).collect();
    let cells = grid
        .par_iter()
        .map(|&(k, theta)| {
            let spec = SynthSpec {
                geometry: Some(geometry.clone()),
                ..base.with_cell(k, theta)
            };
            let out = generate(&spec)?;
            let inputs = CellInputs {
                train: &out.train,
                val: &out.val,
                test: &out.test,
                table: &out.table,
                concept: &spec.correlation[0].concept,
                k,
            };
            run_cell(&inputs, cfg, variant)
                .map(|(r, _, _)| r)
                .map_err(|source| SynthError::Cell { k, theta, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let spearman = cells_spearman(&cells)?;
    Ok(CorrelationReport { cells, spearman })
}
