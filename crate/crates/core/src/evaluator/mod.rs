//! Confusion matrices, binarized and macro-averaged metrics, naive
//! baselines and inter-annotator agreement.
//!
//! Undefined metrics (a zero denominator) are `None`, never 0 or NaN.

pub mod agreement;
pub mod gold;
pub mod report;

use serde::{Deserialize, Serialize};

pub use agreement::{agreement_report, cohens_kappa, spearman, AgreementReport, Kappa, KappaMode};
pub use gold::GoldLabels;
pub use report::MetricsReport;

use crate::label::{Label, PredictionSet};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("{} gold item(s) have no prediction: {}", .0.len(), preview(.0))]
    MissingPredictions(Vec<String>),
    #[error("label {0} is an adjudication error, not a semantic label")]
    NotSemantic(Label),
    #[error("label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {0} items")]
    TooFew(usize),
    #[error("gold set is empty")]
    EmptyGold,
}

fn preview(ids: &[String]) -> String {
    let mut s = ids.iter().take(10).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > 10 {
        s.push_str(", ...");
    }
    s
}

/// Positive iff opioid-related; unsure counts as negative.
pub fn binarize(label: Label) -> Result<bool, EvalError> {
    match label {
        Label::OpioidRelated => Ok(true),
        Label::NotOpioidRelated | Label::Unsure => Ok(false),
        other => Err(EvalError::NotSemantic(other)),
    }
}

/// Predicted-label rows (all five labels) by manual-label columns (the
/// three semantic labels).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix3 {
    pub counts: [[u64; 3]; 5],
}

impl ConfusionMatrix3 {
    /// Builds from the three semantic rows; error rows are zero.
    pub fn from_rows(rows: [[u64; 3]; 3]) -> Self {
        let mut counts = [[0; 3]; 5];
        counts[..3].copy_from_slice(&rows);
        ConfusionMatrix3 { counts }
    }

    pub fn with_error_rows(mut self, content_restriction: [u64; 3], api: [u64; 3]) -> Self {
        self.counts[3] = content_restriction;
        self.counts[4] = api;
        self
    }

    pub fn add(&mut self, predicted: Label, gold: Label) -> Result<(), EvalError> {
        if gold.is_error() {
            return Err(EvalError::NotSemantic(gold));
        }
        self.counts[predicted.index()][gold.index()] += 1;
        Ok(())
    }

    pub fn get(&self, predicted: Label, gold: Label) -> u64 {
        if gold.is_error() {
            0
        } else {
            self.counts[predicted.index()][gold.index()]
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, predicted: Label) -> u64 {
        self.counts[predicted.index()].iter().sum()
    }

    pub fn column_total(&self, gold: Label) -> u64 {
        self.counts.iter().map(|r| r[gold.index()]).sum()
    }

    /// Error rows folded into the not-opioid-related row.
    pub fn resolved(&self) -> [[u64; 3]; 3] {
        let mut rows = [[0; 3]; 3];
        for (label, row) in Label::ALL.iter().zip(self.counts.iter()) {
            let target = label.resolved().index();
            for (c, v) in row.iter().enumerate() {
                rows[target][c] += v;
            }
        }
        rows
    }

    /// (tp, fp, fn, tn) after binarizing both axes.
    pub fn binary_counts(&self) -> BinaryCounts {
        let rows = self.resolved();
        let pos = Label::OpioidRelated.index();
        let mut c = BinaryCounts::default();
        for (r, row) in rows.iter().enumerate() {
            for (g, &v) in row.iter().enumerate() {
                match (r == pos, g == pos) {
                    (true, true) => c.tp += v,
                    (true, false) => c.fp += v,
                    (false, true) => c.fn_ += v,
                    (false, false) => c.tn += v,
                }
            }
        }
        c
    }
}

/// Result of matching predictions against gold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub matrix: ConfusionMatrix3,
    /// Predictions for posts that have no gold label.
    pub unlabeled: usize,
}

/// Cross-tabulates original predicted labels against gold labels.
pub fn confusion(predictions: &PredictionSet, gold: &GoldLabels) -> Result<Confusion, EvalError> {
    let missing: Vec<String> = gold
        .iter()
        .filter(|(id, _)| !predictions.contains(id))
        .map(|(id, _)| id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingPredictions(missing));
    }
    let mut matrix = ConfusionMatrix3::default();
    let mut unlabeled = 0;
    for (id, p) in predictions.iter() {
        match gold.get(id) {
            Some(g) => matrix.add(p.original(), g)?,
            None => unlabeled += 1,
        }
    }
    Ok(Confusion { matrix, unlabeled })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl BinaryCounts {
    /// Counts from aligned (predicted, actual) binary pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = BinaryCounts::default();
        for (p, a) in pairs {
            match (p, a) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn harmonic(p: Option<f64>, r: Option<f64>) -> Option<f64> {
    match (p, r) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub counts: BinaryCounts,
}

impl BinaryMetrics {
    pub fn from_counts(c: BinaryCounts) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        BinaryMetrics {
            accuracy: ratio(c.tp + c.tn, c.total()),
            precision,
            recall,
            f1: harmonic(precision, recall),
            counts: c,
        }
    }
}

/// Binarized metrics; error rows count as negative predictions.
pub fn binary_metrics(cm: &ConfusionMatrix3) -> BinaryMetrics {
    BinaryMetrics::from_counts(cm.binary_counts())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: Label,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub accuracy: Option<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

/// One-vs-rest metrics per semantic class, averaged without weights.
///
/// A class whose precision, recall or f1 is undefined contributes 0 to the
/// corresponding mean.
pub fn macro_metrics(cm: &ConfusionMatrix3) -> MacroMetrics {
    let rows = cm.resolved();
    let total: u64 = rows.iter().flatten().sum();
    let trace: u64 = (0..3).map(|i| rows[i][i]).sum();
    let per_class: Vec<ClassMetrics> = Label::SEMANTIC
        .iter()
        .map(|&label| {
            let k = label.index();
            let predicted: u64 = rows[k].iter().sum();
            let actual: u64 = rows.iter().map(|r| r[k]).sum();
            let precision = ratio(rows[k][k], predicted);
            let recall = ratio(rows[k][k], actual);
            ClassMetrics {
                label,
                precision,
                recall,
                f1: harmonic(precision, recall),
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> Option<f64>| {
        per_class.iter().map(|c| f(c).unwrap_or(0.0)).sum::<f64>() / per_class.len() as f64
    };
    MacroMetrics {
        accuracy: ratio(trace, total),
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        per_class,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    IncludeAll,
    ExcludeAll,
}

/// Metrics of labelling every gold item positive (include-all) or negative
/// (exclude-all).
pub fn baseline(kind: BaselineKind, gold: &GoldLabels) -> Result<BinaryMetrics, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let predicted = kind == BaselineKind::IncludeAll;
    let pairs: Vec<(bool, bool)> = gold
        .iter()
        .map(|(_, l)| binarize(l).map(|a| (predicted, a)))
        .collect::<Result<_, _>>()?;
    Ok(BinaryMetrics::from_counts(BinaryCounts::from_pairs(pairs)))
}
