//! `cubic`: train probes, mine concept lexicons, score concept bias and run
//! the synthetic validation sweep from the command line.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cubic_core::ScoreVariant;

use config::{CorpusFormat, DatasetPaths, RunConfig, UndersampleSettings};

/// Bad invocation or unusable input; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "cubic", version, about = "Concept-level bias identification for linear probes on vision-language embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run config; relative paths inside resolve against its directory.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Run seed; overrides the config.
    #[arg(long, env = "CUBIC_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a bias-free linear probe on image embeddings.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training set: EMBEDDINGS LABELS [FLAGS]
        #[arg(long, num_args = 2..=3, value_names = ["EMBEDDINGS", "LABELS", "FLAGS"])]
        train: Option<Vec<PathBuf>>,
        /// Validation set: EMBEDDINGS LABELS [FLAGS]
        #[arg(long, num_args = 2..=3, value_names = ["EMBEDDINGS", "LABELS", "FLAGS"])]
        val: Option<Vec<PathBuf>>,
        /// Where to write the probe (default: OUTPUT_DIR/probe.json).
        #[arg(long)]
        probe: Option<PathBuf>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Score every concept of a table against a trained probe and rank them.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        probe: Option<PathBuf>,
        /// Concept table: EMBEDDINGS NAMES SUPERCLASS
        #[arg(long, num_args = 3, value_names = ["EMBEDDINGS", "NAMES", "SUPERCLASS"])]
        concepts: Option<Vec<PathBuf>>,
        #[arg(long)]
        superclass_label: Option<String>,
        /// superclass_first, concept_first or concept_only.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<ScoreVariant>,
        /// Ranking depth; repeat for several.
        #[arg(long = "top-k")]
        top_k: Vec<usize>,
        #[arg(long)]
        filter_map: Option<PathBuf>,
        /// Report every concept, ignoring any configured filter.
        #[arg(long)]
        no_filter: bool,
    },
    /// Mine a concept lexicon from a caption corpus.
    Mine {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<CorpusFormat>,
        /// Output lexicon (default: OUTPUT_DIR/lexicon.txt).
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Undersample a dataset to a target class/concept disagreement ratio.
    Undersample {
        #[command(flatten)]
        common: Common,
        /// Source dataset: EMBEDDINGS LABELS FLAGS
        #[arg(long, num_args = 3, value_names = ["EMBEDDINGS", "LABELS", "FLAGS"])]
        pool: Option<Vec<PathBuf>>,
        #[arg(long)]
        concept: Option<String>,
        #[arg(long, short)]
        k: Option<u8>,
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Run a manifest of (concept, k, θ) cells and correlate scores with bias.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Generate a synthetic fixture and check the score/bias correlation on it.
    SynthCheck {
        #[command(flatten)]
        common: Common,
        /// Write the fixture without running the sweep.
        #[arg(long)]
        fixture_only: bool,
    },
}

fn parse_variant(s: &str) -> Result<ScoreVariant, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown variant {s:?}; expected superclass_first, concept_first or concept_only"))
}

fn base_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let seed = cfg.seed;
    cfg.set_seed(seed);
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Train {
            common,
            train,
            val,
            probe,
            max_epochs,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(v) = train {
                cfg.train_data = Some(DatasetPaths::from_args(&v));
            }
            if let Some(v) = val {
                cfg.val_data = Some(DatasetPaths::from_args(&v));
            }
            if probe.is_some() {
                cfg.probe = probe;
            }
            if let Some(e) = max_epochs {
                cfg.training.max_epochs = e;
            }
            cfg.validate()?;
            commands::train(&cfg)
        }
        Command::Score {
            common,
            probe,
            concepts,
            superclass_label,
            variant,
            top_k,
            filter_map,
            no_filter,
        } => {
            let mut cfg = base_config(&common)?;
            if probe.is_some() {
                cfg.probe = probe;
            }
            if let Some(v) = concepts {
                let label = superclass_label
                    .clone()
                    .or_else(|| cfg.concepts.as_ref().map(|c| c.superclass_label.clone()))
                    .ok_or_else(|| UsageError("--superclass-label is required with --concepts".into()))?;
                cfg.concepts = Some(config::ConceptPaths {
                    embeddings: v[0].clone(),
                    names: v[1].clone(),
                    superclass: v[2].clone(),
                    superclass_label: label,
                });
            } else if let (Some(label), Some(c)) = (superclass_label, cfg.concepts.as_mut()) {
                c.superclass_label = label;
            }
            if let Some(v) = variant {
                cfg.variant = v;
            }
            if !top_k.is_empty() {
                cfg.top_k = top_k;
            }
            if filter_map.is_some() {
                cfg.filter_map = filter_map;
            }
            cfg.validate()?;
            commands::score(&cfg, no_filter)
        }
        Command::Mine {
            common,
            corpus,
            format,
            lexicon,
        } => {
            let mut cfg = base_config(&common)?;
            if corpus.is_some() {
                cfg.corpus = corpus;
            }
            if let Some(f) = format {
                cfg.corpus_format = f;
            }
            if lexicon.is_some() {
                cfg.lexicon = lexicon;
            }
            commands::mine(&cfg)
        }
        Command::Undersample {
            common,
            pool,
            concept,
            k,
            theta,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(v) = pool {
                cfg.pool_data = Some(DatasetPaths::from_args(&v));
            }
            if concept.is_some() || k.is_some() || theta.is_some() {
                let base = cfg.undersample.clone();
                let pick = |what: &str| UsageError(format!("--{what} is required"));
                cfg.undersample = Some(UndersampleSettings {
                    concept: concept
                        .or_else(|| base.as_ref().map(|b| b.concept.clone()))
                        .ok_or_else(|| pick("concept"))?,
                    k: k.or_else(|| base.as_ref().map(|b| b.k)).ok_or_else(|| pick("k"))?,
                    theta: theta.or_else(|| base.as_ref().map(|b| b.theta)).ok_or_else(|| pick("theta"))?,
                });
            }
            commands::undersample(&cfg)
        }
        Command::Eval { common, manifest } => {
            let mut cfg = base_config(&common)?;
            if manifest.is_some() {
                cfg.manifest = manifest;
            }
            cfg.validate()?;
            commands::eval(&cfg)
        }
        Command::SynthCheck { common, fixture_only } => {
            let cfg = base_config(&common)?;
            cfg.validate()?;
            commands::synth_check(&cfg, fixture_only)
        }
    }
}

fn exit_status(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>()
            || cause.is::<cubic_core::LatentIoError>()
            || cause.is::<serde_json::Error>()
        {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_status(&err))
        }
    }
}
