//! Emergent-slang simulation: replace known ambiguous slang terms with
//! fake ones and check which predictors still recognize the posts.

use std::collections::HashSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize, Corpus, FilterStep, Post};
use crate::label::Label;
use crate::lexicon::{fold, MatchPolicy, TermMatcher};
use crate::par;

/// Post meta key holding the number of replacements made.
pub const SUBSTITUTIONS_KEY: &str = "substitutions";
/// Post meta key holding the class of a paired-dataset post.
pub const CLASS_KEY: &str = "class";

/// The eight ambiguous terms the protocol targets.
pub const AMBIGUOUS_TERMS: [&str; 8] = ["fenty", "smack", "lean", "oxy", "blues", "H", "fetty", "tar"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SlangError {
    #[error("substitution map is empty")]
    Empty,
    #[error("empty key or value in substitution map")]
    EmptyEntry,
    #[error("key {0:?} appears twice")]
    DuplicateKey(String),
    #[error("fake term {0:?} is used for more than one key")]
    DuplicateValue(String),
    #[error("fake term {value:?} collides with key {key:?}")]
    ValueIsKey { value: String, key: String },
    #[error("{0} corpus is empty")]
    EmptyCorpus(&'static str),
    #[error("post {0:?} contains none of the substitution keys")]
    NoTargetTerm(String),
    #[error("malformed substitution map: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MapFile {
    pairs: IndexMap<String, String>,
    #[serde(default)]
    policy: MatchPolicy,
}

/// Ambiguous term → fake term, matched under `policy`.
#[derive(Debug, Clone)]
pub struct SubstitutionMap {
    keys: Vec<String>,
    values: Vec<String>,
    policy: MatchPolicy,
    matcher: TermMatcher,
}

impl SubstitutionMap {
    pub fn new(
        pairs: impl IntoIterator<Item = (impl AsRef<str>, impl AsRef<str>)>,
        policy: MatchPolicy,
    ) -> Result<Self, SlangError> {
        let key_of = |s: &str| if policy.case_insensitive { fold(s) } else { s.to_string() };
        let mut keys = Vec::new();
        let mut values = Vec::new();
        let mut seen_keys = HashSet::new();
        let mut seen_values = HashSet::new();
        for (k, v) in pairs {
            let (k, v) = (normalize(k.as_ref()), normalize(v.as_ref()));
            if k.is_empty() || v.is_empty() {
                return Err(SlangError::EmptyEntry);
            }
            if !seen_keys.insert(key_of(&k)) {
                return Err(SlangError::DuplicateKey(k));
            }
            if !seen_values.insert(key_of(&v)) {
                return Err(SlangError::DuplicateValue(v));
            }
            keys.push(k);
            values.push(v);
        }
        if keys.is_empty() {
            return Err(SlangError::Empty);
        }
        let matcher = TermMatcher::new(keys.iter().map(String::as_str), policy);
        // a fake term must neither be a key nor contain one, or substitution
        // would cascade on a second pass
        for v in &values {
            if let Some(span) = matcher.spans(v).first() {
                return Err(SlangError::ValueIsKey {
                    value: v.clone(),
                    key: keys[span.term].clone(),
                });
            }
        }
        Ok(SubstitutionMap {
            keys,
            values,
            policy,
            matcher,
        })
    }

    /// Illustrative default mapping of the eight ambiguous terms to
    /// creature names.
    pub fn illustrative() -> Self {
        let fakes = ["Pikachu", "Snorlax", "Jigglypuff", "Onix", "Squirtle", "Haunter", "Eevee", "Gengar"];
        SubstitutionMap::new(AMBIGUOUS_TERMS.iter().zip(fakes), MatchPolicy::default())
            .expect("default map is valid")
    }

    pub fn parse(json: &[u8]) -> Result<Self, SlangError> {
        let file: MapFile =
            serde_json::from_slice(json).map_err(|e| SlangError::Malformed(e.to_string()))?;
        SubstitutionMap::new(file.pairs, file.policy)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let file = MapFile {
            pairs: self.pairs().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            policy: self.policy,
        };
        serde_json::to_value(file).expect("map serializes")
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.keys.iter().map(String::as_str).zip(self.values.iter().map(String::as_str))
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn policy(&self) -> MatchPolicy {
        self.policy
    }

    /// Fake term → original term.
    pub fn inverse(&self) -> Result<SubstitutionMap, SlangError> {
        SubstitutionMap::new(self.values.iter().zip(&self.keys), self.policy)
    }

    pub fn contains_key_term(&self, text: &str) -> bool {
        self.matcher.is_match(text)
    }

    /// Replaces every key occurrence in `text`; returns the new text and the
    /// replacement count. Text outside matched spans is untouched.
    pub fn substitute_text(&self, text: &str) -> (String, usize) {
        let spans = self.matcher.replaceable_spans(text);
        if spans.is_empty() {
            return (text.to_string(), 0);
        }
        let mut out = String::with_capacity(text.len() + 8 * spans.len());
        let mut last = 0;
        for s in &spans {
            out.push_str(&text[last..s.start]);
            out.push_str(&self.values[s.term]);
            last = s.end;
        }
        out.push_str(&text[last..]);
        (out, spans.len())
    }

    /// Substituted copy of `post` with the replacement count in its meta.
    pub fn substitute(&self, post: &Post) -> Post {
        let (text, count) = self.substitute_text(&post.text);
        let mut out = post.clone();
        out.text = text;
        out.meta.insert(SUBSTITUTIONS_KEY.into(), serde_json::json!(count));
        out
    }

    pub fn substitute_corpus(&self, corpus: &Corpus) -> Corpus {
        let posts = par::map_slice(corpus.posts(), |p| self.substitute(p));
        corpus.derive(posts, FilterStep::Substitute { pairs: self.len() })
    }
}

/// Original and substituted versions of the same labelled posts.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub original: Corpus,
    pub modified: Corpus,
}

impl PairedDataset {
    /// Class labels recorded in the original posts' meta.
    pub fn classes(&self) -> Vec<(String, Label)> {
        self.original
            .posts()
            .iter()
            .filter_map(|p| {
                let class = p.meta.get(CLASS_KEY)?.as_str()?.parse().ok()?;
                Some((p.id.clone(), class))
            })
            .collect()
    }
}

/// Tags posts with their class, concatenates them, and substitutes every
/// post. Every post must contain at least one key.
pub fn build_paired_dataset(
    opioid_posts: &Corpus,
    non_opioid_posts: &Corpus,
    map: &SubstitutionMap,
) -> Result<PairedDataset, SlangError> {
    if opioid_posts.is_empty() {
        return Err(SlangError::EmptyCorpus("opioid"));
    }
    if non_opioid_posts.is_empty() {
        return Err(SlangError::EmptyCorpus("non-opioid"));
    }
    let tagged = |corpus: &Corpus, class: Label| -> Result<Vec<Post>, SlangError> {
        corpus
            .posts()
            .iter()
            .map(|p| {
                if !map.contains_key_term(&p.text) {
                    return Err(SlangError::NoTargetTerm(p.id.clone()));
                }
                let mut p = p.clone();
                p.meta.insert(CLASS_KEY.into(), serde_json::json!(class.as_str()));
                Ok(p)
            })
            .collect()
    };
    let mut posts = tagged(opioid_posts, Label::OpioidRelated)?;
    posts.extend(tagged(non_opioid_posts, Label::NotOpioidRelated)?);
    let original = Corpus::from_posts(posts).with_provenance(crate::corpus::Provenance {
        source: "paired-dataset".into(),
        ..Default::default()
    });
    let modified = map.substitute_corpus(&original);
    Ok(PairedDataset { original, modified })
}
