//! Concept lexicon mining from caption corpora.
//!
//! Tagged mode chunks name phrases from part-of-speech tagged captions:
//! every contiguous run of one to three adjective/noun tokens ending in a
//! noun. Heuristic mode needs no tagger: it drops function words and emits
//! the unigrams, bigrams and trigrams of the words that remain, as long as
//! they were adjacent in the original caption.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::latent_io::normalize_concept;

pub const MAX_PHRASE_TOKENS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosTag {
    Noun,
    Adj,
    Det,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedCaption {
    pub tokens: Vec<String>,
    pub tags: Vec<PosTag>,
}

impl TaggedCaption {
    pub fn new(tokens: Vec<String>, tags: Vec<PosTag>) -> Result<Self, String> {
        if tokens.len() != tags.len() {
            return Err(format!("{} tokens but {} tags", tokens.len(), tags.len()));
        }
        Ok(Self { tokens, tags })
    }

    /// Parses one JSON-lines record `{"tokens": [...], "tags": [...]}`.
    pub fn from_json(line: &str) -> Result<Self, String> {
        let c: TaggedCaption = serde_json::from_str(line).map_err(|e| e.to_string())?;
        Self::new(c.tokens, c.tags)
    }
}

/// Name phrases of a tagged caption, in order of their last token.
pub fn extract_phrases(caption: &TaggedCaption) -> Vec<String> {
    let tags = &caption.tags;
    let mut out = Vec::new();
    for end in 0..tags.len() {
        if tags[end] != PosTag::Noun {
            continue;
        }
        let mut start = end;
        loop {
            out.push(render(&caption.tokens[start..=end]));
            if start == 0 || end - start + 1 == MAX_PHRASE_TOKENS {
                break;
            }
            start -= 1;
            if !matches!(tags[start], PosTag::Adj | PosTag::Noun) {
                break;
            }
        }
    }
    out
}

/// Function words dropped by heuristic mining.
pub const DEFAULT_STOPLIST: &[&str] = &[
    "a", "about", "above", "after", "against", "all", "along", "among", "an", "and", "any", "are",
    "around", "as", "at", "be", "been", "before", "behind", "being", "below", "beneath", "beside",
    "between", "both", "but", "by", "can", "could", "did", "do", "does", "down", "during", "each",
    "either", "for", "from", "had", "has", "have", "he", "her", "hers", "him", "his", "i", "in",
    "inside", "into", "is", "it", "its", "may", "me", "might", "my", "near", "neither", "nor",
    "of", "off", "on", "onto", "or", "our", "out", "outside", "over", "she", "should", "so",
    "some", "than", "that", "the", "their", "them", "then", "there", "these", "they", "this",
    "those", "through", "to", "toward", "towards", "under", "up", "upon", "us", "was", "we",
    "were", "what", "when", "where", "which", "while", "who", "whom", "whose", "will", "with",
    "within", "without", "would", "you", "your",
];

/// Heuristic phrases of a raw caption.
pub fn extract_heuristic(caption: &str, stoplist: &[&str]) -> Vec<String> {
    let cleaned: String = caption
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '\'' || c == '-' { c } else { ' ' })
        .collect();
    let stop: HashSet<&str> = stoplist.iter().copied().collect();
    let mut out = Vec::new();
    // current run of adjacent content words
    let mut run: Vec<&str> = Vec::new();
    for tok in cleaned.split_whitespace() {
        let tok = tok.trim_matches(|c| c == '\'' || c == '-');
        if tok.is_empty() || stop.contains(tok) {
            run.clear();
            continue;
        }
        run.push(tok);
        let end = run.len();
        for len in 1..=end.min(MAX_PHRASE_TOKENS) {
            out.push(render(&run[end - len..]));
        }
    }
    out
}

fn render<S: AsRef<str>>(tokens: &[S]) -> String {
    let joined = tokens.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
    normalize_concept(&joined)
}

/// A caption that can be mined for phrases.
pub trait PhraseSource {
    fn phrases(&self) -> Vec<String>;
}

impl PhraseSource for TaggedCaption {
    fn phrases(&self) -> Vec<String> {
        extract_phrases(self)
    }
}

impl PhraseSource for str {
    fn phrases(&self) -> Vec<String> {
        extract_heuristic(self, DEFAULT_STOPLIST)
    }
}

impl PhraseSource for String {
    fn phrases(&self) -> Vec<String> {
        self.as_str().phrases()
    }
}

impl<P: PhraseSource + ?Sized> PhraseSource for &P {
    fn phrases(&self) -> Vec<String> {
        (**self).phrases()
    }
}

/// Deduplicated, normalized concept names in first-seen order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptLexicon {
    concepts: Vec<String>,
    source_tag: String,
    captions_read: usize,
}

impl ConceptLexicon {
    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn captions_read(&self) -> usize {
        self.captions_read
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn contains(&self, concept: &str) -> bool {
        self.concepts.iter().any(|c| *c == normalize_concept(concept))
    }
}

/// Mines every caption and merges the phrases into one lexicon.
pub fn build_lexicon<I>(captions: I, source_tag: &str) -> ConceptLexicon
where
    I: IntoIterator,
    I::Item: PhraseSource,
{
    let mut seen = HashSet::new();
    let mut concepts = Vec::new();
    let mut captions_read = 0;
    for caption in captions {
        captions_read += 1;
        for p in caption.phrases() {
            let key = normalize_concept(&p);
            if !key.is_empty() && seen.insert(key.clone()) {
                concepts.push(key);
            }
        }
    }
    if concepts.is_empty() {
        log::warn!("lexicon from {captions_read} captions is empty");
    }
    ConceptLexicon {
        concepts,
        source_tag: source_tag.to_string(),
        captions_read,
    }
}
