//! Stratified manual-labeling sessions.
//!
//! A session holds shuffled `(post_id, text)` items with no trace of the
//! predictions used to select them, and an append-only log of annotator
//! events. Current state is always derived from the log.

use std::collections::{BTreeSet, HashMap};
use std::hash::{Hash, Hasher};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::evaluator::{agreement_report, AgreementReport, EvalError, GoldLabels};
use crate::label::{Label, PredictionSet};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("invalid sampling policy: {0}")]
    Policy(String),
    #[error("predicted post {0:?} is missing from the corpus")]
    MissingText(String),
    #[error("requested {requested} negatives but only {available} are available")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("post {0:?} is not in this session")]
    UnknownItem(String),
    #[error("{0} is not an annotation label")]
    NotSemantic(Label),
    #[error("annotator id is empty")]
    EmptyAnnotator,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn default_take_all() -> BTreeSet<Label> {
    [
        Label::OpioidRelated,
        Label::Unsure,
        Label::ContentRestrictionError,
        Label::ApiError,
    ]
    .into_iter()
    .collect()
}

/// Which predicted posts go into a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    #[serde(default = "default_take_all")]
    pub take_all_of: BTreeSet<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_count: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        SamplingPolicy {
            take_all_of: default_take_all(),
            negative_fraction: Some(0.0225),
            negative_count: None,
            seed: 0,
        }
    }
}

impl SamplingPolicy {
    pub fn fraction(fraction: f64, seed: u64) -> Self {
        SamplingPolicy {
            negative_fraction: Some(fraction),
            seed,
            ..Default::default()
        }
    }

    pub fn count(count: usize, seed: u64) -> Self {
        SamplingPolicy {
            negative_fraction: None,
            negative_count: Some(count),
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        match (self.negative_fraction, self.negative_count) {
            (Some(_), Some(_)) => Err(SessionError::Policy(
                "set negative_fraction or negative_count, not both".into(),
            )),
            (None, None) => Err(SessionError::Policy(
                "one of negative_fraction or negative_count is required".into(),
            )),
            (Some(f), None) if !(0.0..=1.0).contains(&f) => Err(SessionError::Policy(format!(
                "negative_fraction {f} outside [0, 1]"
            ))),
            _ => Ok(()),
        }
    }

    /// Number of remainder posts to draw from a pool of `pool`.
    /// Fractions round half away from zero.
    pub fn remainder_count(&self, pool: usize) -> Result<usize, SessionError> {
        self.validate()?;
        let n = match (self.negative_fraction, self.negative_count) {
            (Some(f), _) => (f * pool as f64).round() as usize,
            (_, Some(n)) => n,
            _ => unreachable!(),
        };
        if n > pool {
            return Err(SessionError::SampleTooLarge {
                requested: n,
                available: pool,
            });
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionItem {
    pub post_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "label", rename_all = "snake_case")]
pub enum Action {
    Label(Label),
    Skip,
}

/// One entry of the append-only response log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseEvent {
    pub post_id: String,
    pub annotator: String,
    #[serde(flatten)]
    pub action: Action,
    pub at: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Pending,
    Labeled,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorProgress {
    pub annotator: String,
    pub labeled: usize,
    pub skipped: usize,
    pub pending: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub items: usize,
    pub annotators: Vec<AnnotatorProgress>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSession {
    pub session_id: String,
    pub policy: SamplingPolicy,
    items: Vec<SessionItem>,
    #[serde(default)]
    log: Vec<ResponseEvent>,
}

/// Builds a session from every prediction whose original label is in
/// `take_all_of` plus a seeded uniform sample of the rest, shuffled.
pub fn build_session(
    predictions: &PredictionSet,
    corpus: &Corpus,
    policy: &SamplingPolicy,
) -> Result<AnnotationSession, SessionError> {
    policy.validate()?;
    let index = corpus.index();
    let mut take = Vec::new();
    let mut rest = Vec::new();
    for (id, p) in predictions.iter() {
        let post = index.get(id).ok_or_else(|| SessionError::MissingText(id.to_string()))?;
        if policy.take_all_of.contains(&p.original()) {
            take.push(*post);
        } else {
            rest.push(*post);
        }
    }
    let n = policy.remainder_count(rest.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let picked = rand::seq::index::sample(&mut rng, rest.len(), n);
    let mut chosen: Vec<usize> = picked.into_vec();
    chosen.sort_unstable();
    take.extend(chosen.into_iter().map(|i| rest[i]));
    take.shuffle(&mut rng);
    let items: Vec<SessionItem> = take
        .into_iter()
        .map(|p| SessionItem {
            post_id: p.id.clone(),
            text: p.text.clone(),
        })
        .collect();
    Ok(AnnotationSession {
        session_id: session_id(&items, policy.seed),
        policy: policy.clone(),
        items,
        log: Vec::new(),
    })
}

fn session_id(items: &[SessionItem], seed: u64) -> String {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    seed.hash(&mut h);
    for it in items {
        it.post_id.hash(&mut h);
    }
    format!("s{:016x}", h.finish())
}

impl AnnotationSession {
    pub fn items(&self) -> &[SessionItem] {
        &self.items
    }

    pub fn log(&self) -> &[ResponseEvent] {
        &self.log
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn check(&self, post_id: &str, annotator: &str) -> Result<(), SessionError> {
        if annotator.trim().is_empty() {
            return Err(SessionError::EmptyAnnotator);
        }
        if !self.items.iter().any(|i| i.post_id == post_id) {
            return Err(SessionError::UnknownItem(post_id.to_string()));
        }
        Ok(())
    }

    fn append(&mut self, post_id: &str, annotator: &str, action: Action) {
        self.log.push(ResponseEvent {
            post_id: post_id.to_string(),
            annotator: annotator.to_string(),
            action,
            at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        });
    }

    /// Stores `label` for `(post_id, annotator)`. A relabel supersedes the
    /// earlier response; both stay in the log.
    pub fn record_label(&mut self, post_id: &str, annotator: &str, label: Label) -> Result<(), SessionError> {
        if !label.is_semantic() {
            return Err(SessionError::NotSemantic(label));
        }
        self.check(post_id, annotator)?;
        self.append(post_id, annotator, Action::Label(label));
        Ok(())
    }

    pub fn skip(&mut self, post_id: &str, annotator: &str) -> Result<(), SessionError> {
        self.check(post_id, annotator)?;
        self.append(post_id, annotator, Action::Skip);
        Ok(())
    }

    fn latest(&self, annotator: &str) -> HashMap<&str, Action> {
        let mut state = HashMap::new();
        for e in self.log.iter().filter(|e| e.annotator == annotator) {
            state.insert(e.post_id.as_str(), e.action);
        }
        state
    }

    pub fn status(&self, post_id: &str, annotator: &str) -> ItemStatus {
        match self.latest(annotator).get(post_id) {
            None => ItemStatus::Pending,
            Some(Action::Label(_)) => ItemStatus::Labeled,
            Some(Action::Skip) => ItemStatus::Skipped,
        }
    }

    /// Current label per item for one annotator, in item order.
    pub fn responses(&self, annotator: &str) -> Vec<(&str, Label)> {
        let latest = self.latest(annotator);
        self.items
            .iter()
            .filter_map(|i| match latest.get(i.post_id.as_str()) {
                Some(Action::Label(l)) => Some((i.post_id.as_str(), *l)),
                _ => None,
            })
            .collect()
    }

    /// Every event for one `(post_id, annotator)` pair, oldest first.
    pub fn audit(&self, post_id: &str, annotator: &str) -> Vec<&ResponseEvent> {
        self.log
            .iter()
            .filter(|e| e.post_id == post_id && e.annotator == annotator)
            .collect()
    }

    /// First item the annotator has neither labeled nor skipped.
    pub fn next_pending(&self, annotator: &str) -> Option<&SessionItem> {
        let latest = self.latest(annotator);
        self.items.iter().find(|i| !latest.contains_key(i.post_id.as_str()))
    }

    pub fn annotators(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.log.iter().map(|e| e.annotator.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn progress(&self, annotator: &str) -> AnnotatorProgress {
        let latest = self.latest(annotator);
        let labeled = latest.values().filter(|a| matches!(a, Action::Label(_))).count();
        let skipped = latest.len() - labeled;
        AnnotatorProgress {
            annotator: annotator.to_string(),
            labeled,
            skipped,
            pending: self.items.len() - latest.len(),
        }
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            session_id: self.session_id.clone(),
            items: self.items.len(),
            annotators: self.annotators().iter().map(|a| self.progress(a)).collect(),
        }
    }

    /// Labeled items only; pending and skipped items are omitted.
    pub fn export_gold(&self, annotator: &str) -> GoldLabels {
        self.responses(annotator)
            .into_iter()
            .map(|(id, l)| (id.to_string(), l))
            .collect()
    }

    /// Agreement over items both annotators have labeled.
    pub fn agreement(&self, a: &str, b: &str) -> Result<AgreementReport, EvalError> {
        let (la, lb) = self.export_gold(a).align(&self.export_gold(b));
        agreement_report(&la, &lb)
    }

    /// A new, empty-log session over a seeded uniform sample of `n` items,
    /// for a second annotator.
    pub fn subset(&self, n: usize, seed: u64) -> Result<AnnotationSession, SessionError> {
        if n > self.items.len() {
            return Err(SessionError::SampleTooLarge {
                requested: n,
                available: self.items.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items: Vec<SessionItem> = rand::seq::index::sample(&mut rng, self.items.len(), n)
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect();
        Ok(AnnotationSession {
            session_id: session_id(&items, seed),
            policy: self.policy.clone(),
            items,
            log: Vec::new(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("session serializes")
    }

    pub fn from_json(json: &str) -> Result<AnnotationSession, SessionError> {
        let s: AnnotationSession = serde_json::from_str(json)?;
        for e in &s.log {
            if !s.items.iter().any(|i| i.post_id == e.post_id) {
                return Err(SessionError::UnknownItem(e.post_id.clone()));
            }
        }
        Ok(s)
    }

    /// Writes to a sibling temp file and renames over `path`.
    pub fn save(&self, path: &Path) -> Result<(), SessionError> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.to_json())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AnnotationSession, SessionError> {
        AnnotationSession::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Post;

    fn fixture(counts: &[(Label, usize)]) -> (PredictionSet, Corpus) {
        let mut preds = PredictionSet::new("m");
        let mut posts = Vec::new();
        let mut k = 0;
        for &(label, n) in counts {
            for _ in 0..n {
                let id = format!("p{k}");
                posts.push(Post::new(&id, format!("text {k}")));
                preds.insert(id, label);
                k += 1;
            }
        }
        (preds.resolve_errors(), Corpus::from_posts(posts))
    }

    #[test]
    fn strata_and_fraction() {
        let (p, c) = fixture(&[
            (Label::OpioidRelated, 4),
            (Label::Unsure, 3),
            (Label::ApiError, 2),
            (Label::NotOpioidRelated, 100),
        ]);
        let s = build_session(&p, &c, &SamplingPolicy::fraction(0.105, 1)).unwrap();
        // 10.5 rounds away from zero
        assert_eq!(s.len(), 9 + 11);
        for id in ["p0", "p3", "p7", "p8"] {
            assert!(s.items().iter().any(|i| i.post_id == id));
        }
    }

    #[test]
    fn spec_fixture_counts() {
        let (p, c) = fixture(&[
            (Label::OpioidRelated, 395),
            (Label::Unsure, 865),
            (Label::ContentRestrictionError, 987),
            (Label::ApiError, 52),
            (Label::NotOpioidRelated, 58_356),
        ]);
        let s = build_session(&p, &c, &SamplingPolicy::fraction(0.0225, 7)).unwrap();
        assert_eq!(s.len(), 2299 + 1313);
    }

    #[test]
    fn everything_at_fraction_one() {
        let (p, c) = fixture(&[(Label::OpioidRelated, 3), (Label::NotOpioidRelated, 7)]);
        let policy = SamplingPolicy {
            take_all_of: Label::ALL.into_iter().collect(),
            ..SamplingPolicy::fraction(1.0, 3)
        };
        let s = build_session(&p, &c, &policy).unwrap();
        let mut ids: Vec<_> = s.items().iter().map(|i| i.post_id.clone()).collect();
        ids.sort();
        let mut want: Vec<_> = c.ids().map(String::from).collect();
        want.sort();
        assert_eq!(ids, want);
    }

    #[test]
    fn deterministic_bytes() {
        let (p, c) = fixture(&[(Label::Unsure, 5), (Label::NotOpioidRelated, 50)]);
        let a = build_session(&p, &c, &SamplingPolicy::fraction(0.2, 9)).unwrap();
        let b = build_session(&p, &c, &SamplingPolicy::fraction(0.2, 9)).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let other = build_session(&p, &c, &SamplingPolicy::fraction(0.2, 10)).unwrap();
        assert_ne!(a.to_json(), other.to_json());
    }

    #[test]
    fn policy_errors() {
        let (p, c) = fixture(&[(Label::NotOpioidRelated, 5)]);
        assert!(matches!(
            build_session(&p, &c, &SamplingPolicy::count(6, 0)),
            Err(SessionError::SampleTooLarge { requested: 6, available: 5 })
        ));
        let both = SamplingPolicy {
            negative_count: Some(1),
            ..SamplingPolicy::fraction(0.5, 0)
        };
        assert!(matches!(both.validate(), Err(SessionError::Policy(_))));
        assert!(SamplingPolicy::fraction(1.5, 0).validate().is_err());
        let mut missing = p.clone();
        missing.insert("ghost", Label::OpioidRelated);
        assert!(matches!(
            build_session(&missing, &c, &SamplingPolicy::count(0, 0)),
            Err(SessionError::MissingText(_))
        ));
    }

    #[test]
    fn items_carry_no_labels() {
        let (p, c) = fixture(&[(Label::ContentRestrictionError, 2), (Label::NotOpioidRelated, 2)]);
        let s = build_session(&p, &c, &SamplingPolicy::count(2, 0)).unwrap();
        let items = serde_json::to_string(s.items()).unwrap();
        for l in Label::ALL {
            assert!(!items.contains(l.as_str()));
        }
    }

    #[test]
    fn labeling_lifecycle() {
        let (p, c) = fixture(&[(Label::OpioidRelated, 20)]);
        let mut s = build_session(&p, &c, &SamplingPolicy::count(0, 0)).unwrap();
        let first = s.items()[0].post_id.clone();
        assert_eq!(s.next_pending("a").unwrap().post_id, first);
        s.record_label(&first, "a", Label::Unsure).unwrap();
        assert_eq!(s.status(&first, "a"), ItemStatus::Labeled);
        s.record_label(&first, "a", Label::OpioidRelated).unwrap();
        assert_eq!(s.responses("a"), [(first.as_str(), Label::OpioidRelated)]);
        assert_eq!(s.audit(&first, "a").len(), 2);
        s.record_label(&first, "b", Label::NotOpioidRelated).unwrap();
        assert_eq!(s.responses("b").len(), 1);
        assert_eq!(s.status(&first, "c"), ItemStatus::Pending);

        let second = s.items()[1].post_id.clone();
        s.skip(&second, "a").unwrap();
        assert_eq!(s.next_pending("a").unwrap().post_id, s.items()[2].post_id);
        assert_eq!(s.export_gold("a").len(), 1);

        assert!(matches!(
            s.record_label(&first, "a", Label::ApiError),
            Err(SessionError::NotSemantic(Label::ApiError))
        ));
        assert!(matches!(
            s.record_label("nope", "a", Label::Unsure),
            Err(SessionError::UnknownItem(_))
        ));
        assert!(matches!(s.record_label(&first, " ", Label::Unsure), Err(SessionError::EmptyAnnotator)));

        let prog = s.progress("a");
        assert_eq!((prog.labeled, prog.skipped, prog.pending), (1, 1, 18));
        assert_eq!(s.summary().annotators.len(), 2);
    }

    #[test]
    fn export_half_labeled() {
        let (p, c) = fixture(&[(Label::OpioidRelated, 20)]);
        let mut s = build_session(&p, &c, &SamplingPolicy::count(0, 0)).unwrap();
        for _ in 0..10 {
            let id = s.next_pending("a").unwrap().post_id.clone();
            s.record_label(&id, "a", Label::NotOpioidRelated).unwrap();
        }
        assert!(s.next_pending("a").is_some());
        assert_eq!(s.export_gold("a").len(), 10);
    }

    #[test]
    fn agreement_on_shared_items() {
        let (p, c) = fixture(&[(Label::OpioidRelated, 4)]);
        let mut s = build_session(&p, &c, &SamplingPolicy::count(0, 0)).unwrap();
        let ids: Vec<String> = s.items().iter().map(|i| i.post_id.clone()).collect();
        let a = [Label::OpioidRelated, Label::OpioidRelated, Label::NotOpioidRelated, Label::NotOpioidRelated];
        let b = [Label::OpioidRelated, Label::NotOpioidRelated, Label::NotOpioidRelated, Label::NotOpioidRelated];
        for (i, id) in ids.iter().enumerate() {
            s.record_label(id, "a", a[i]).unwrap();
            s.record_label(id, "b", b[i]).unwrap();
        }
        let r = s.agreement("a", "b").unwrap();
        assert!((r.kappa_3class.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn persistence_round_trip() {
        let (p, c) = fixture(&[(Label::Unsure, 3)]);
        let mut s = build_session(&p, &c, &SamplingPolicy::count(0, 0)).unwrap();
        let id = s.items()[0].post_id.clone();
        s.record_label(&id, "a", Label::Unsure).unwrap();
        s.skip(&id, "b").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        s.save(&path).unwrap();
        assert_eq!(AnnotationSession::load(&path).unwrap(), s);

        let mut json: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        json["log"][0]["post_id"] = "ghost".into();
        assert!(AnnotationSession::from_json(&json.to_string()).is_err());
    }

    #[test]
    fn second_annotator_subset() {
        let (p, c) = fixture(&[(Label::Unsure, 30)]);
        let s = build_session(&p, &c, &SamplingPolicy::count(0, 0)).unwrap();
        let sub = s.subset(10, 4).unwrap();
        assert_eq!(sub.len(), 10);
        assert!(sub.items().iter().all(|i| s.items().contains(i)));
        assert_eq!(sub.items(), s.subset(10, 4).unwrap().items());
        assert!(s.subset(31, 0).is_err());
    }
}
