use std::process::ExitCode;

use cubic_core::probe::{train as fit, StopReason};
use cubic_core::{Probe, Split};
use serde::Serialize;

use super::{load, show};
use crate::config::RunConfig;
use crate::output::{write_atomic, write_json, Provenance};

#[derive(Serialize)]
struct TrainReport<'a> {
    provenance: Provenance,
    probe: String,
    epochs_run: usize,
    best_epoch: usize,
    stop_reason: StopReason,
    best_val_loss: f64,
    best_val_accuracy: f64,
    training: &'a cubic_core::TrainConfig,
}

pub fn train(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let train_paths = cfg.require(&cfg.train_data, "train_data")?;
    let val_paths = cfg.require(&cfg.val_data, "val_data")?;
    let train_ds = load(train_paths, Split::Train)?;
    let val_ds = load(val_paths, Split::Val)?;

    let (probe, log): (Probe, _) = fit(&train_ds, &val_ds, &cfg.training)?;
    let probe_path = cfg.probe_path();
    write_atomic(&probe_path, format!("{}\n", probe.to_json()).as_bytes())?;
    write_atomic(&cfg.output_dir.join("train_log.jsonl"), log.to_jsonl().as_bytes())?;

    let best = &log.epochs[log.best_epoch];
    let report = TrainReport {
        provenance: Provenance::new("train", cfg)
            .input("train_embeddings", &train_paths.embeddings)
            .input("train_labels", &train_paths.labels)
            .input("val_embeddings", &val_paths.embeddings)
            .input("val_labels", &val_paths.labels),
        probe: show(&probe_path),
        epochs_run: log.epochs_run,
        best_epoch: log.best_epoch,
        stop_reason: log.stop_reason,
        best_val_loss: best.val_loss,
        best_val_accuracy: best.val_accuracy,
        training: &cfg.training,
    };
    write_json(&cfg.output_dir.join("train_report.json"), &report)?;
    println!(
        "probe written to {} (best epoch {} of {}, val accuracy {:.4})",
        probe_path.display(),
        log.best_epoch,
        log.epochs_run,
        best.val_accuracy
    );
    Ok(ExitCode::SUCCESS)
}
