use std::path::{Path, PathBuf};

use anyhow::Context;
use cubic_core::synth::SynthSpec;
use cubic_core::{ScoreVariant, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::UsageError;

/// Embeddings, labels and optional concept flags of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub embeddings: PathBuf,
    pub labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flags: Option<PathBuf>,
}

impl DatasetPaths {
    pub fn from_args(values: &[PathBuf]) -> Self {
        Self {
            embeddings: values[0].clone(),
            labels: values[1].clone(),
            flags: values.get(2).cloned(),
        }
    }

    fn rebase(&mut self, base: &Path) {
        rebase(&mut self.embeddings, base);
        rebase(&mut self.labels, base);
        if let Some(f) = &mut self.flags {
            rebase(f, base);
        }
    }
}

/// Text-side concept table: row-aligned embeddings and names plus the
/// single-row superclass embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptPaths {
    pub embeddings: PathBuf,
    pub names: PathBuf,
    pub superclass: PathBuf,
    pub superclass_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UndersampleSettings {
    pub concept: String,
    pub k: u8,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    /// One caption per line.
    #[default]
    Plain,
    /// JSON-lines of `{"tokens": [...], "tags": [...]}`.
    Tagged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_data: Option<DatasetPaths>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_data: Option<DatasetPaths>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_data: Option<DatasetPaths>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_data: Option<DatasetPaths>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub concepts: Option<ConceptPaths>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    pub corpus_format: CorpusFormat,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter_map: Option<PathBuf>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub filter_keywords: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub training: TrainConfig,
    pub variant: ScoreVariant,
    pub top_k: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub undersample: Option<UndersampleSettings>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            train_data: None,
            val_data: None,
            pool_data: None,
            test_data: None,
            concepts: None,
            corpus: None,
            corpus_format: CorpusFormat::Plain,
            lexicon: None,
            filter_map: None,
            filter_keywords: Vec::new(),
            probe: None,
            manifest: None,
            training: TrainConfig::default(),
            variant: ScoreVariant::default(),
            top_k: vec![10],
            undersample: None,
            synth: None,
        }
    }
}

fn rebase(path: &mut PathBuf, base: &Path) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

fn rebase_opt(path: &mut Option<PathBuf>, base: &Path) {
    if let Some(p) = path {
        rebase(p, base);
    }
}

impl RunConfig {
    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                anyhow::Error::new(UsageError(format!("input not found: {}", path.display())))
            } else {
                anyhow::Error::new(e).context(format!("reading {}", path.display()))
            }
        })?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        cfg.rebase(&base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        rebase(&mut self.output_dir, base);
        for ds in [&mut self.train_data, &mut self.val_data, &mut self.pool_data, &mut self.test_data]
            .into_iter()
            .flatten()
        {
            ds.rebase(base);
        }
        if let Some(c) = &mut self.concepts {
            rebase(&mut c.embeddings, base);
            rebase(&mut c.names, base);
            rebase(&mut c.superclass, base);
        }
        for p in [
            &mut self.corpus,
            &mut self.lexicon,
            &mut self.filter_map,
            &mut self.probe,
            &mut self.manifest,
        ] {
            rebase_opt(p, base);
        }
    }

    /// Sets the run seed, which also seeds probe training.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.training.seed = seed;
    }

    /// SHA-256 of the resolved config as serialized JSON.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn require<'a, T>(&self, value: &'a Option<T>, what: &str) -> anyhow::Result<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| UsageError(format!("{what} not configured")).into())
    }

    pub fn probe_path(&self) -> PathBuf {
        self.probe.clone().unwrap_or_else(|| self.output_dir.join("probe.json"))
    }

    pub fn lexicon_path(&self) -> PathBuf {
        self.lexicon.clone().unwrap_or_else(|| self.output_dir.join("lexicon.txt"))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.training
            .validate()
            .map_err(|e| UsageError(format!("invalid training config: {e}")))?;
        if self.top_k.is_empty() || self.top_k.contains(&0) {
            return Err(UsageError("top_k must list positive values".into()).into());
        }
        Ok(())
    }
}

pub fn read_to_string(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            UsageError(format!("input not found: {}", path.display())).into()
        } else {
            anyhow::Error::new(e).context(format!("reading {}", path.display()))
        }
    })
}

pub fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| UsageError(format!("invalid JSON in {}: {e}", path.display())))
        .context("parsing input")
}
