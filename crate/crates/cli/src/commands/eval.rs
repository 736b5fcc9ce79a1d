use std::io::Write;
use std::process::ExitCode;

use cubic_core::eval::{stratified_split, undersample, GroupCounts, SplitFractions, UndersampleSpec};
use cubic_core::pipeline::{run_cell, CellInputs};
use cubic_core::{normalize_concept, ConceptEmbeddingTable, LabeledLatentDataset, Rates, Split};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load, load_table, show};
use crate::config::{parse_json, RunConfig};
use crate::output::{write_atomic, write_json, Provenance};
use crate::UsageError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestCell {
    pub concept: String,
    pub k: u8,
    pub theta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
struct CellRow {
    concept: String,
    k: u8,
    theta: f64,
    seed: u64,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_achieved: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cos_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rates: Option<Rates>,
    #[serde(skip_serializing_if = "Option::is_none")]
    counts: Option<GroupCounts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub provenance: Provenance,
    pub cells: usize,
    pub failed: usize,
    pub spearman: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spearman_error: Option<String>,
    pub measured_on: &'static str,
}

struct Shared<'a> {
    pool: &'a LabeledLatentDataset,
    test: Option<&'a LabeledLatentDataset>,
    table: &'a ConceptEmbeddingTable,
    cfg: &'a RunConfig,
}

fn run_one(shared: &Shared<'_>, cell: &ManifestCell, seed: u64) -> anyhow::Result<CellRow> {
    let spec = UndersampleSpec {
        concept: cell.concept.clone(),
        k: cell.k,
        theta: cell.theta,
        seed,
    };
    let shrunk = undersample(shared.pool, &spec)?;
    let (train, val, held_out) = stratified_split(&shrunk.dataset, &cell.concept, SplitFractions::default(), seed)?;
    let mut training = shared.cfg.training.clone();
    training.seed = seed;
    let inputs = CellInputs {
        train: &train,
        val: &val,
        test: shared.test.unwrap_or(&held_out),
        table: shared.table,
        concept: &cell.concept,
        k: cell.k,
    };
    let (result, _, _) = run_cell(&inputs, &training, shared.cfg.variant)?;
    let rates = result.measurement.rates;
    Ok(CellRow {
        concept: result.concept,
        k: cell.k,
        theta: cell.theta,
        seed,
        status: "ok",
        theta_achieved: Some(shrunk.theta_after),
        delta_c: Some(result.delta_c),
        cos_alpha: Some(result.cos_alpha),
        counts: Some(rates.counts.clone()),
        rates: Some(rates),
        error: None,
    })
}

/// Runs every manifest cell and writes `cells.jsonl` and `summary.json`.
pub fn run_eval(cfg: &RunConfig) -> anyhow::Result<EvalSummary> {
    let manifest_path = cfg.require(&cfg.manifest, "manifest")?;
    let manifest: Vec<ManifestCell> = parse_json(manifest_path)?;
    if manifest.is_empty() {
        return Err(UsageError(format!("manifest {} lists no cells", manifest_path.display())).into());
    }
    let pool_paths = cfg.require(&cfg.pool_data, "pool_data")?;
    let concepts = cfg.require(&cfg.concepts, "concepts")?;
    let pool = load(pool_paths, Split::Train)?;
    let test = cfg.test_data.as_ref().map(|p| load(p, Split::Test)).transpose()?;
    let table = load_table(concepts)?;
    let shared = Shared {
        pool: &pool,
        test: test.as_ref(),
        table: &table,
        cfg,
    };

    let rows: Vec<CellRow> = manifest
        .par_iter()
        .map(|cell| {
            let seed = cell.seed.unwrap_or(cfg.seed);
            run_one(&shared, cell, seed).unwrap_or_else(|e| {
                log::warn!("cell {} k={} theta={} failed: {e:#}", cell.concept, cell.k, cell.theta);
                CellRow {
                    concept: normalize_concept(&cell.concept),
                    k: cell.k,
                    theta: cell.theta,
                    seed,
                    status: "failed",
                    theta_achieved: None,
                    delta_c: None,
                    cos_alpha: None,
                    rates: None,
                    counts: None,
                    error: Some(format!("{e:#}")),
                }
            })
        })
        .collect();

    let mut lines = Vec::new();
    for row in &rows {
        serde_json::to_writer(&mut lines, row)?;
        lines.write_all(b"\n")?;
    }
    write_atomic(&cfg.output_dir.join("cells.jsonl"), &lines)?;

    let ok: Vec<&CellRow> = rows.iter().filter(|r| r.status == "ok").collect();
    let deltas: Vec<f64> = ok.iter().filter_map(|r| r.delta_c).collect();
    let scores: Vec<f64> = ok.iter().filter_map(|r| r.cos_alpha).collect();
    let (spearman, spearman_error) = match cubic_core::eval::spearman(&deltas, &scores) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let mut provenance = Provenance::new("eval", cfg)
        .input("manifest", manifest_path)
        .input("pool_embeddings", &pool_paths.embeddings)
        .input("concept_embeddings", &concepts.embeddings);
    if let Some(t) = &cfg.test_data {
        provenance = provenance.input("test_embeddings", &t.embeddings);
    }
    let summary = EvalSummary {
        provenance,
        cells: rows.len(),
        failed: rows.len() - ok.len(),
        spearman,
        spearman_error,
        measured_on: if test.is_some() { "test_data" } else { "held_out_split" },
    };
    write_json(&cfg.output_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn eval(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let summary = run_eval(cfg)?;
    match summary.spearman {
        Some(r) => println!("{} cells, {} failed, spearman {r:.4}", summary.cells, summary.failed),
        None => println!(
            "{} cells, {} failed, spearman undefined: {}",
            summary.cells,
            summary.failed,
            summary.spearman_error.as_deref().unwrap_or("")
        ),
    }
    println!("results written to {}", show(&cfg.output_dir));
    Ok(if summary.failed > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}
