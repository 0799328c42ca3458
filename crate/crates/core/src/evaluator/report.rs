use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    baseline, binary_metrics, confusion, macro_metrics, AgreementReport, BaselineKind,
    BinaryMetrics, ConfusionMatrix3, EvalError, GoldLabels, MacroMetrics,
};
use crate::label::{Label, PredictionSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub predicted: Label,
    pub opioid_related: u64,
    pub not_opioid_related: u64,
    pub unsure: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub include_all: BinaryMetrics,
    pub exclude_all: BinaryMetrics,
}

/// Everything computed for one predictor against one gold set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub predictor_id: String,
    pub n_gold: usize,
    /// Predictions without a gold label, excluded from every metric.
    pub unlabeled: usize,
    pub matrix: Vec<MatrixRow>,
    pub binary: BinaryMetrics,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
    pub baselines: Baselines,
    pub agreement: Option<AgreementReport>,
}

impl MetricsReport {
    pub fn build(predictions: &PredictionSet, gold: &GoldLabels) -> Result<Self, EvalError> {
        let c = confusion(predictions, gold)?;
        Ok(MetricsReport {
            predictor_id: predictions.predictor_id.clone(),
            n_gold: gold.len(),
            unlabeled: c.unlabeled,
            matrix: matrix_rows(&c.matrix),
            binary: binary_metrics(&c.matrix),
            macro_avg: macro_metrics(&c.matrix),
            baselines: Baselines {
                include_all: baseline(BaselineKind::IncludeAll, gold)?,
                exclude_all: baseline(BaselineKind::ExcludeAll, gold)?,
            },
            agreement: None,
        })
    }

    pub fn with_agreement(mut self, agreement: AgreementReport) -> Self {
        self.agreement = Some(agreement);
        self
    }

    /// Plain-text rendering for terminals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "predictor: {}  (gold n={}, unlabeled={})", self.predictor_id, self.n_gold, self.unlabeled);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<28}{:>16}{:>20}{:>10}", "predicted \\ manual", "opioid-related", "not-opioid-related", "unsure");
        for r in &self.matrix {
            let _ = writeln!(
                s,
                "{:<28}{:>16}{:>20}{:>10}",
                r.predicted.as_str(),
                r.opioid_related,
                r.not_opioid_related,
                r.unsure
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<14}{:>10}{:>11}{:>9}{:>9}", "", "accuracy", "precision", "recall", "f1");
        let row = |name: &str, m: &BinaryMetrics| {
            format!(
                "{:<14}{:>10}{:>11}{:>9}{:>9}\n",
                name,
                fmt_metric(m.accuracy),
                fmt_metric(m.precision),
                fmt_metric(m.recall),
                fmt_metric(m.f1)
            )
        };
        s.push_str(&row("binarized", &self.binary));
        s.push_str(&format!(
            "{:<14}{:>10}{:>11}{:>9}{:>9}\n",
            "macro",
            fmt_metric(self.macro_avg.accuracy),
            fmt_metric(Some(self.macro_avg.macro_precision)),
            fmt_metric(Some(self.macro_avg.macro_recall)),
            fmt_metric(Some(self.macro_avg.macro_f1)),
        ));
        s.push_str(&row("include-all", &self.baselines.include_all));
        s.push_str(&row("exclude-all", &self.baselines.exclude_all));
        if let Some(a) = &self.agreement {
            let _ = writeln!(s);
            let _ = writeln!(
                s,
                "agreement (n={}): kappa {}  binarized kappa {}  spearman {}",
                a.n_items,
                fmt_metric(a.kappa_3class),
                fmt_metric(a.kappa_binarized),
                fmt_metric(a.spearman_rho)
            );
        }
        s
    }

    /// `predictor,strategy,metric,value` rows for external plotting; undefined
    /// values are left empty.
    pub fn plot_rows(&self) -> Vec<[String; 4]> {
        let mut rows = Vec::new();
        let mut push = |strategy: &str, m: &BinaryMetrics| {
            for (name, v) in [
                ("accuracy", m.accuracy),
                ("precision", m.precision),
                ("recall", m.recall),
                ("f1", m.f1),
            ] {
                rows.push([
                    self.predictor_id.clone(),
                    strategy.to_string(),
                    name.to_string(),
                    v.map(|v| format!("{v:.6}")).unwrap_or_default(),
                ]);
            }
        };
        push("predictor", &self.binary);
        push("include-all", &self.baselines.include_all);
        push("exclude-all", &self.baselines.exclude_all);
        rows
    }
}

pub fn write_plot_csv<W: std::io::Write>(reports: &[MetricsReport], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["predictor", "strategy", "metric", "value"])?;
    for r in reports {
        for row in r.plot_rows() {
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "undef".into())
}

fn matrix_rows(cm: &ConfusionMatrix3) -> Vec<MatrixRow> {
    Label::ALL
        .iter()
        .map(|&l| MatrixRow {
            predicted: l,
            opioid_related: cm.get(l, Label::OpioidRelated),
            not_opioid_related: cm.get(l, Label::NotOpioidRelated),
            unsure: cm.get(l, Label::Unsure),
        })
        .collect()
}
