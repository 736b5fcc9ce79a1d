use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cubic_core::eval::DEFAULT_THETA_GRID;
use cubic_core::latent_io::{write_embeddings, write_flags, write_labels};
use cubic_core::synth::{generate, SynthSpec};
use serde::Serialize;

use super::eval::{run_eval, EvalSummary, ManifestCell};
use crate::config::{ConceptPaths, DatasetPaths, RunConfig};
use crate::output::{write_atomic, write_json, write_with, Provenance};

/// Minimum Spearman correlation for the check to pass.
pub const THRESHOLD: f64 = 0.9;

#[derive(Serialize)]
struct SynthReport {
    provenance: Provenance,
    spec: SynthSpec,
    fixture: String,
    threshold: f64,
    spearman: Option<f64>,
    failed_cells: usize,
    passed: bool,
}

fn fixture_spec(cfg: &RunConfig) -> SynthSpec {
    let mut spec = cfg.synth.clone().unwrap_or_else(|| SynthSpec {
        distractors: 20,
        ..SynthSpec::default()
    });
    spec.seed = cfg.seed;
    spec
}

fn dataset(stem: &str) -> DatasetPaths {
    DatasetPaths {
        embeddings: PathBuf::from(format!("{stem}.cube")),
        labels: PathBuf::from(format!("{stem}.labels")),
        flags: Some(PathBuf::from(format!("{stem}.flags.jsonl"))),
    }
}

/// Writes train/val/test splits with the planted concept at θ=0, a balanced
/// pool for undersampling, the concept table, a 12-cell manifest and a run
/// config whose paths are relative to the fixture directory.
fn write_fixture(spec: &SynthSpec, cfg: &RunConfig, dir: &Path) -> anyhow::Result<()> {
    let main = generate(spec)?;
    for (name, bytes) in main.files()? {
        write_atomic(&dir.join(name), &bytes)?;
    }

    let k = spec.correlation.first().map_or(1, |p| p.k);
    let pool_spec = SynthSpec {
        n: spec.n * 2,
        geometry: Some(main.geometry.clone()),
        ..spec.with_cell(k, 1.0)
    };
    let pool = generate(&pool_spec)?.train;
    write_with(&dir.join("pool.cube"), |b| Ok(write_embeddings(pool.embeddings(), b).map(|_| ())?))?;
    write_with(&dir.join("pool.labels"), |b| Ok(write_labels(pool.labels(), b)?))?;
    write_with(&dir.join("pool.flags.jsonl"), |b| Ok(write_flags(pool.concept_flags(), b)?))?;

    let concept = main.truth[0].concept.clone();
    let manifest: Vec<ManifestCell> = [0u8, 1]
        .iter()
        .flat_map(|&k| {
            let concept = concept.clone();
            DEFAULT_THETA_GRID.iter().map(move |&theta| ManifestCell {
                concept: concept.clone(),
                k,
                theta,
                seed: None,
            })
        })
        .collect();
    write_json(&dir.join("manifest.json"), &manifest)?;

    let fixture_cfg = RunConfig {
        seed: cfg.seed,
        output_dir: PathBuf::from("out"),
        train_data: Some(dataset("train")),
        val_data: Some(dataset("val")),
        pool_data: Some(dataset("pool")),
        test_data: Some(dataset("test")),
        concepts: Some(ConceptPaths {
            embeddings: "concepts.cube".into(),
            names: "concepts.names".into(),
            superclass: "superclass.cube".into(),
            superclass_label: spec.superclass_label.clone(),
        }),
        manifest: Some("manifest.json".into()),
        training: cfg.training.clone(),
        variant: cfg.variant,
        top_k: vec![5],
        ..RunConfig::default()
    };
    write_json(&dir.join("config.json"), &fixture_cfg)?;
    Ok(())
}

pub fn synth_check(cfg: &RunConfig, fixture_only: bool) -> anyhow::Result<ExitCode> {
    let spec = fixture_spec(cfg);
    let dir = cfg.output_dir.join("fixture");
    write_fixture(&spec, cfg, &dir)?;
    println!("fixture written to {}", dir.display());
    if fixture_only {
        return Ok(ExitCode::SUCCESS);
    }

    let mut eval_cfg = RunConfig::load(&dir.join("config.json"))?;
    eval_cfg.output_dir = cfg.output_dir.join("eval");
    let EvalSummary { spearman, failed, .. } = run_eval(&eval_cfg)?;
    let passed = failed == 0 && spearman.is_some_and(|r| r >= THRESHOLD);
    let report = SynthReport {
        provenance: Provenance::new("synth-check", cfg),
        spec,
        fixture: dir.display().to_string(),
        threshold: THRESHOLD,
        spearman,
        failed_cells: failed,
        passed,
    };
    write_json(&cfg.output_dir.join("synth_report.json"), &report)?;
    match spearman {
        Some(r) => println!("spearman {r:.4} (threshold {THRESHOLD}): {}", if passed { "pass" } else { "FAIL" }),
        None => println!("spearman undefined: FAIL"),
    }
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
