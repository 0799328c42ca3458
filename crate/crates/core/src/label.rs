//! Topical labels and per-predictor prediction sets.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    OpioidRelated,
    NotOpioidRelated,
    Unsure,
    /// Provider refused the request under its content policy.
    ContentRestrictionError,
    /// Transport or response-format failure after retries were exhausted.
    ApiError,
}

impl Label {
    pub const ALL: [Label; 5] = [
        Label::OpioidRelated,
        Label::NotOpioidRelated,
        Label::Unsure,
        Label::ContentRestrictionError,
        Label::ApiError,
    ];

    /// The labels a human annotator may assign.
    pub const SEMANTIC: [Label; 3] = [Label::OpioidRelated, Label::NotOpioidRelated, Label::Unsure];

    pub fn is_semantic(self) -> bool {
        !self.is_error()
    }

    pub fn is_error(self) -> bool {
        matches!(self, Label::ContentRestrictionError | Label::ApiError)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::OpioidRelated => "opioid-related",
            Label::NotOpioidRelated => "not-opioid-related",
            Label::Unsure => "unsure",
            Label::ContentRestrictionError => "content-restriction-error",
            Label::ApiError => "api-error",
        }
    }

    /// Error labels count as not opioid-related; semantic labels pass through.
    pub fn resolved(self) -> Label {
        if self.is_error() {
            Label::NotOpioidRelated
        } else {
            self
        }
    }

    /// Position in [`Label::ALL`], used as a matrix row index.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label {0:?}")]
pub struct UnknownLabel(pub String);

impl FromStr for Label {
    type Err = UnknownLabel;

    /// Accepts the kebab-case names plus spaced/underscored spellings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .chars()
            .map(|c| if c == ' ' || c == '_' { '-' } else { c.to_ascii_lowercase() })
            .collect();
        match key.as_str() {
            "opioid-related" => Ok(Label::OpioidRelated),
            "not-opioid-related" => Ok(Label::NotOpioidRelated),
            "unsure" => Ok(Label::Unsure),
            "content-restriction-error" => Ok(Label::ContentRestrictionError),
            "api-error" => Ok(Label::ApiError),
            _ => Err(UnknownLabel(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    /// Original label before error resolution, kept for error-row reporting.
    pub shadow_label: Option<Label>,
    /// Id of the transcript that produced this label, if any.
    pub transcript: Option<String>,
}

impl Prediction {
    /// The label as originally produced (shadow if resolution happened).
    pub fn original(&self) -> Label {
        self.shadow_label.unwrap_or(self.label)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PredictionIoError {
    #[error("prediction file line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("prediction file mixes predictors {0:?} and {1:?}")]
    MixedPredictors(String, String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One predictor's labels, at most one per post, in insertion order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PredictionSet {
    pub predictor_id: String,
    entries: IndexMap<String, Prediction>,
}

/// One line of the prediction JSONL file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub post_id: String,
    pub label: Label,
    pub shadow_label: Option<Label>,
    pub predictor_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
}

impl PredictionSet {
    pub fn new(predictor_id: impl Into<String>) -> Self {
        PredictionSet {
            predictor_id: predictor_id.into(),
            entries: IndexMap::new(),
        }
    }

    /// Inserts or replaces the prediction for `post_id`.
    pub fn insert(&mut self, post_id: impl Into<String>, label: Label) {
        self.insert_prediction(
            post_id,
            Prediction {
                label,
                shadow_label: None,
                transcript: None,
            },
        );
    }

    pub fn insert_prediction(&mut self, post_id: impl Into<String>, prediction: Prediction) {
        self.entries.insert(post_id.into(), prediction);
    }

    pub fn get(&self, post_id: &str) -> Option<&Prediction> {
        self.entries.get(post_id)
    }

    pub fn contains(&self, post_id: &str) -> bool {
        self.entries.contains_key(post_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Prediction)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Count of entries whose original label is `label`.
    pub fn count(&self, label: Label) -> usize {
        self.entries.values().filter(|p| p.original() == label).count()
    }

    /// Maps error labels to not opioid-related, keeping the error in the
    /// shadow field.
    pub fn resolve_errors(&self) -> PredictionSet {
        let entries = self
            .entries
            .iter()
            .map(|(id, p)| {
                let mut p = p.clone();
                if p.label.is_error() {
                    p.shadow_label = Some(p.label);
                    p.label = p.label.resolved();
                }
                (id.clone(), p)
            })
            .collect();
        PredictionSet {
            predictor_id: self.predictor_id.clone(),
            entries,
        }
    }

    pub fn records(&self) -> impl Iterator<Item = PredictionRecord> + '_ {
        self.entries.iter().map(|(id, p)| PredictionRecord {
            post_id: id.clone(),
            label: p.label,
            shadow_label: p.shadow_label,
            predictor_id: self.predictor_id.clone(),
            transcript: p.transcript.clone(),
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for rec in self.records() {
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    /// Reads a prediction file. All lines must name the same predictor; a
    /// later line for the same post replaces an earlier one.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<PredictionSet, PredictionIoError> {
        let mut set: Option<PredictionSet> = None;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PredictionRecord = serde_json::from_str(&line)
                .map_err(|source| PredictionIoError::Parse { line: i + 1, source })?;
            let set = set.get_or_insert_with(|| PredictionSet::new(rec.predictor_id.clone()));
            if set.predictor_id != rec.predictor_id {
                return Err(PredictionIoError::MixedPredictors(
                    set.predictor_id.clone(),
                    rec.predictor_id,
                ));
            }
            set.insert_prediction(
                rec.post_id,
                Prediction {
                    label: rec.label,
                    shadow_label: rec.shadow_label,
                    transcript: rec.transcript,
                },
            );
        }
        Ok(set.unwrap_or_default())
    }
}
