//! Term lexicons and lexicon-based post classification.
//!
//! Terms are matched exactly (no stemming or misspelling expansion) under a
//! [`MatchPolicy`]. By default matching is case-insensitive and requires the
//! term to be delimited by non-alphanumeric characters or the text edges.

mod matcher;

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use matcher::{fold, is_delimited, Span, TermMatcher};

use crate::corpus::{normalize, normalized, Corpus, Post};
use crate::label::{Label, PredictionSet};
use crate::par;

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("lexicon {0:?} has no terms")]
    NoTerms(String),
    #[error("malformed lexicon file: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("lexicon input is not valid utf-8")]
    InvalidUtf8,
    #[error("term {term:?} contains whitespace but the policy disallows multiword terms")]
    MultiwordDisallowed { term: String },
    #[error("failed to read lexicon: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchPolicy {
    pub case_insensitive: bool,
    /// Term must be delimited by non-alphanumeric characters or text edges.
    pub word_boundary: bool,
    /// Terms may contain internal spaces.
    pub allow_multiword: bool,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        MatchPolicy {
            case_insensitive: true,
            word_boundary: true,
            allow_multiword: true,
        }
    }
}

/// A named term list with its matching policy.
#[derive(Debug, Clone)]
pub struct Lexicon {
    name: String,
    citation: String,
    policy: MatchPolicy,
    terms: Vec<String>,
    matcher: TermMatcher,
}

/// On-disk JSON form of a lexicon.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexiconFile {
    pub name: String,
    #[serde(default)]
    pub citation: String,
    #[serde(default)]
    pub policy: MatchPolicy,
    pub terms: Vec<String>,
}

impl Lexicon {
    /// Normalizes and deduplicates `terms` (duplicates compared after case
    /// folding when the policy is case-insensitive; first spelling kept).
    pub fn new(
        name: impl Into<String>,
        terms: impl IntoIterator<Item = impl AsRef<str>>,
        policy: MatchPolicy,
    ) -> Result<Lexicon, LexiconError> {
        let name = name.into();
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        for term in terms {
            let term = normalize(term.as_ref());
            if term.is_empty() {
                continue;
            }
            if !policy.allow_multiword && term.contains(' ') {
                return Err(LexiconError::MultiwordDisallowed { term });
            }
            let key = if policy.case_insensitive { fold(&term) } else { term.clone() };
            if seen.insert(key) {
                kept.push(term);
            }
        }
        if kept.is_empty() {
            return Err(LexiconError::NoTerms(name));
        }
        let matcher = TermMatcher::new(kept.iter().map(String::as_str), policy);
        Ok(Lexicon {
            name,
            citation: String::new(),
            policy,
            terms: kept,
            matcher,
        })
    }

    pub fn with_citation(mut self, citation: impl Into<String>) -> Self {
        self.citation = citation.into();
        self
    }

    /// Parses either the JSON lexicon format or a plain list with one term
    /// per line. Plain lists get the default policy and `fallback_name`.
    pub fn parse(bytes: &[u8], fallback_name: &str) -> Result<Lexicon, LexiconError> {
        let text = std::str::from_utf8(bytes).map_err(|_| LexiconError::InvalidUtf8)?;
        let text = text.trim_start_matches('\u{feff}');
        if text.trim_start().starts_with('{') {
            let file: LexiconFile = serde_json::from_str(text)?;
            Ok(Lexicon::new(file.name, &file.terms, file.policy)?.with_citation(file.citation))
        } else {
            Lexicon::new(fallback_name, text.lines(), MatchPolicy::default())
        }
    }

    /// Loads from a file; plain lists take their name from the file stem.
    pub fn load(path: &Path) -> Result<Lexicon, LexiconError> {
        let bytes = std::fs::read(path)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("lexicon");
        Lexicon::parse(&bytes, stem)
    }

    pub fn to_file(&self) -> LexiconFile {
        LexiconFile {
            name: self.name.clone(),
            citation: self.citation.clone(),
            policy: self.policy,
            terms: self.terms.clone(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn citation(&self) -> &str {
        &self.citation
    }

    pub fn policy(&self) -> MatchPolicy {
        self.policy
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn matcher(&self) -> &TermMatcher {
        &self.matcher
    }

    /// Terms of this lexicon found in `text` (normalized first).
    pub fn matched_terms(&self, text: &str) -> BTreeSet<String> {
        let text = normalized(text);
        self.matcher
            .matched_terms(&text)
            .into_iter()
            .map(|i| self.terms[i].clone())
            .collect()
    }

    pub fn is_match(&self, text: &str) -> bool {
        self.matcher.is_match(&normalized(text))
    }

    pub fn match_post(&self, post: &Post) -> MatchResult {
        MatchResult {
            post_id: post.id.clone(),
            matched_terms: self.matched_terms(&post.text),
        }
    }
}

/// Terms a lexicon found in one post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub post_id: String,
    pub matched_terms: BTreeSet<String>,
}

impl MatchResult {
    /// Opioid-related iff at least one term matched.
    pub fn label(&self) -> Label {
        if self.matched_terms.is_empty() {
            Label::NotOpioidRelated
        } else {
            Label::OpioidRelated
        }
    }
}

/// Match results for every post, in corpus order.
pub fn match_corpus(corpus: &Corpus, lexicon: &Lexicon) -> Vec<MatchResult> {
    par::map_slice(corpus.posts(), |p| lexicon.match_post(p))
}

/// Binary predictions for every post, labelled with the lexicon's name.
pub fn classify_corpus(corpus: &Corpus, lexicon: &Lexicon) -> PredictionSet {
    let labels = par::map_slice(corpus.posts(), |p| lexicon.is_match(&p.text));
    collect_predictions(corpus, lexicon, labels)
}

/// Single-threaded [`classify_corpus`].
pub fn classify_corpus_seq(corpus: &Corpus, lexicon: &Lexicon) -> PredictionSet {
    let labels = par::map_slice_seq(corpus.posts(), |p| lexicon.is_match(&p.text));
    collect_predictions(corpus, lexicon, labels)
}

fn collect_predictions(corpus: &Corpus, lexicon: &Lexicon, hits: Vec<bool>) -> PredictionSet {
    let mut set = PredictionSet::new(lexicon.name());
    for (post, hit) in corpus.posts().iter().zip(hits) {
        let label = if hit { Label::OpioidRelated } else { Label::NotOpioidRelated };
        set.insert(post.id.clone(), label);
    }
    set
}

/// Small illustrative lexicons; not any published term list.
pub mod examples {
    use super::*;

    /// Includes ambiguous slang, so it over-includes on general text.
    pub fn broad() -> Lexicon {
        Lexicon::new(
            "example-broad",
            [
                "fentanyl", "fenty", "fetty", "opioid", "opioids", "oxy", "oxycodone", "oxycontin",
                "percocet", "percs", "heroin", "smack", "tar", "h", "lean", "purple drank",
                "blues", "m30", "norco", "norcos", "hydrocodone", "codeine", "morphine",
                "methadone", "dope", "china white",
            ],
            MatchPolicy::default(),
        )
        .expect("nonempty")
        .with_citation("illustrative example lexicon shipped with slangtriage")
    }

    /// Unambiguous drug names only.
    pub fn strict() -> Lexicon {
        Lexicon::new(
            "example-strict",
            [
                "fentanyl", "opioid", "opioids", "oxycodone", "oxycontin", "percocet", "heroin",
                "hydrocodone", "codeine", "morphine", "methadone", "buprenorphine", "naloxone",
                "narcan", "suboxone", "tramadol",
            ],
            MatchPolicy::default(),
        )
        .expect("nonempty")
        .with_citation("illustrative example lexicon shipped with slangtriage")
    }
}
