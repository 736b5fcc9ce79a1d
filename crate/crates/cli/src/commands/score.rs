use std::io::Write;
use std::process::ExitCode;

use cubic_core::scorer::{apply_filter, score_table, PROMPT_TEMPLATE};
use cubic_core::{BiasReport, FilterMap, Probe, Score, ScoreVariant};
use serde::Serialize;

use super::{emit, load_table, show};
use crate::config::{read_to_string, RunConfig};
use crate::output::{write_atomic, write_json, Provenance};
use crate::UsageError;

#[derive(Serialize)]
struct Ranked {
    k: usize,
    report: BiasReport,
}

#[derive(Serialize)]
struct ScoreReport {
    provenance: Provenance,
    prompt_template: &'static str,
    superclass_label: String,
    variant: ScoreVariant,
    filter_applied: bool,
    removed_by_filter: usize,
    without_verdict: usize,
    skipped_zero_shift: Vec<String>,
    scores: Vec<Score>,
    rankings: Vec<Ranked>,
}

pub fn score(cfg: &RunConfig, no_filter: bool) -> anyhow::Result<ExitCode> {
    let probe_path = cfg.probe_path();
    let probe = Probe::from_json(&read_to_string(&probe_path)?)
        .map_err(|e| UsageError(format!("invalid probe {}: {e}", probe_path.display())))?;
    let concepts = cfg.require(&cfg.concepts, "concepts")?;
    let table = load_table(concepts)?;
    let outcome = score_table(&probe, &table, cfg.variant)?;

    let mut provenance = Provenance::new("score", cfg)
        .input("probe", &probe_path)
        .input("concept_embeddings", &concepts.embeddings)
        .input("concept_names", &concepts.names)
        .input("superclass", &concepts.superclass);
    let filter = if no_filter {
        None
    } else if let Some(path) = &cfg.filter_map {
        provenance = provenance.input("filter_map", path);
        let text = read_to_string(path)?;
        Some(FilterMap::parse_jsonl(text.as_bytes())?)
    } else if !cfg.filter_keywords.is_empty() {
        Some(FilterMap::from_keywords(table.names(), &cfg.filter_keywords))
    } else {
        None
    };
    let (scores, removed, missing) = match &filter {
        Some(f) => {
            let out = apply_filter(&outcome.scores, f);
            (out.kept, out.removed, out.missing)
        }
        None => (outcome.scores, 0, 0),
    };
    let filter_applied = filter.is_some();
    let label = table.superclass_label();
    let rankings: Vec<Ranked> = cfg
        .top_k
        .iter()
        .map(|&k| Ranked {
            k,
            report: BiasReport::build(&scores, k, label, cfg.variant, filter_applied),
        })
        .collect();

    let mut text = Vec::new();
    for r in &rankings {
        writeln!(text, "top {}\n{}", r.k, r.report.render_text())?;
    }
    let report = ScoreReport {
        provenance,
        prompt_template: PROMPT_TEMPLATE,
        superclass_label: label.to_string(),
        variant: cfg.variant,
        filter_applied,
        removed_by_filter: removed,
        without_verdict: missing,
        skipped_zero_shift: outcome.skipped,
        scores,
        rankings,
    };
    let json_path = cfg.output_dir.join("report.json");
    write_json(&json_path, &report)?;
    write_atomic(&cfg.output_dir.join("report.txt"), &text)?;
    emit(&text)?;
    emit(format!("report written to {}\n", show(&json_path)).as_bytes())?;
    Ok(ExitCode::SUCCESS)
}
