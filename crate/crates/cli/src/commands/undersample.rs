use std::process::ExitCode;

use cubic_core::eval::{undersample as shrink, UndersampleSpec};
use cubic_core::latent_io::{write_embeddings, write_flags, write_labels};
use cubic_core::Split;
use serde::Serialize;

use super::load;
use crate::config::RunConfig;
use crate::output::{write_json, write_with, Provenance};

#[derive(Serialize)]
struct UndersampleReport {
    provenance: Provenance,
    concept: String,
    k: u8,
    theta_target: f64,
    theta_before: f64,
    theta_achieved: f64,
    agreement: usize,
    disagreement: usize,
    kept: Vec<usize>,
}

pub fn undersample(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let pool_paths = cfg.require(&cfg.pool_data, "pool_data")?;
    let settings = cfg.require(&cfg.undersample, "undersample")?;
    let pool = load(pool_paths, Split::Train)?;
    let spec = UndersampleSpec {
        concept: settings.concept.clone(),
        k: settings.k,
        theta: settings.theta,
        seed: cfg.seed,
    };
    let out = shrink(&pool, &spec)?;

    let dir = &cfg.output_dir;
    write_with(&dir.join("undersampled.cube"), |b| Ok(write_embeddings(out.dataset.embeddings(), b).map(|_| ())?))?;
    write_with(&dir.join("undersampled.labels"), |b| Ok(write_labels(out.dataset.labels(), b)?))?;
    write_with(&dir.join("undersampled.flags.jsonl"), |b| Ok(write_flags(out.dataset.concept_flags(), b)?))?;
    let report = UndersampleReport {
        provenance: Provenance::new("undersample", cfg)
            .input("pool_embeddings", &pool_paths.embeddings)
            .input("pool_labels", &pool_paths.labels),
        concept: cubic_core::normalize_concept(&settings.concept),
        k: settings.k,
        theta_target: settings.theta,
        theta_before: out.theta_before,
        theta_achieved: out.theta_after,
        agreement: out.agreement,
        disagreement: out.disagreement,
        kept: out.kept,
    };
    write_json(&dir.join("undersample.json"), &report)?;
    println!(
        "theta {:.4} -> {:.4} ({} agreement, {} disagreement samples kept)",
        report.theta_before, report.theta_achieved, report.agreement, report.disagreement
    );
    Ok(ExitCode::SUCCESS)
}
