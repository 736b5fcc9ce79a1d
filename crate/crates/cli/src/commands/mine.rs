use std::process::ExitCode;

use cubic_core::latent_io::write_names;
use cubic_core::lexicon::{build_lexicon, TaggedCaption};
use serde::Serialize;

use super::show;
use crate::config::{read_to_string, CorpusFormat, RunConfig};
use crate::output::{write_json, write_with, Provenance};
use crate::UsageError;

#[derive(Serialize)]
struct MineReport {
    provenance: Provenance,
    format: CorpusFormat,
    captions_read: usize,
    concepts: usize,
    lexicon: String,
}

pub fn mine(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let corpus = cfg.require(&cfg.corpus, "corpus")?;
    let text = read_to_string(corpus)?;
    let tag = show(corpus);
    let lexicon = match cfg.corpus_format {
        CorpusFormat::Plain => build_lexicon(text.lines(), &tag),
        CorpusFormat::Tagged => {
            let captions = text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    TaggedCaption::from_json(l)
                        .map_err(|e| UsageError(format!("{}:{}: {e}", corpus.display(), i + 1)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            build_lexicon(captions, &tag)
        }
    };

    let out = cfg.lexicon_path();
    write_with(&out, |buf| Ok(write_names(lexicon.concepts(), buf)?))?;
    let report = MineReport {
        provenance: Provenance::new("mine", cfg).input("corpus", corpus),
        format: cfg.corpus_format,
        captions_read: lexicon.captions_read(),
        concepts: lexicon.len(),
        lexicon: show(&out),
    };
    write_json(&cfg.output_dir.join("mine_report.json"), &report)?;
    if lexicon.is_empty() {
        eprintln!("warning: no concepts found in {}", corpus.display());
    }
    println!(
        "{} concepts from {} captions written to {}",
        lexicon.len(),
        lexicon.captions_read(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}
