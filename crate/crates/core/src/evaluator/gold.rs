//! Gold label files: CSV `post_id,label`.

use std::io::{Read, Write};

use indexmap::IndexMap;

use super::EvalError;
use crate::label::Label;

#[derive(Debug, thiserror::Error)]
pub enum GoldIoError {
    #[error("gold file row {row}: {message}")]
    Row { row: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Manual labels keyed by post id, semantic labels only.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldLabels {
    labels: IndexMap<String, Label>,
}

impl GoldLabels {
    pub fn insert(&mut self, post_id: impl Into<String>, label: Label) -> Result<(), EvalError> {
        if label.is_error() {
            return Err(EvalError::NotSemantic(label));
        }
        self.labels.insert(post_id.into(), label);
        Ok(())
    }

    pub fn get(&self, post_id: &str) -> Option<Label> {
        self.labels.get(post_id).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Label)> {
        self.labels.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn labels(&self) -> Vec<Label> {
        self.labels.values().copied().collect()
    }

    /// Label pairs for ids present in both sets, in `self`'s order.
    pub fn align(&self, other: &GoldLabels) -> (Vec<Label>, Vec<Label>) {
        self.labels
            .iter()
            .filter_map(|(id, a)| other.get(id).map(|b| (*a, b)))
            .unzip()
    }

    pub fn read_csv<R: Read>(input: R) -> Result<GoldLabels, GoldIoError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
        let (Some(id_col), Some(label_col)) = (col("post_id"), col("label")) else {
            return Err(GoldIoError::Row {
                row: 0,
                message: "header must contain post_id and label".into(),
            });
        };
        let mut gold = GoldLabels::default();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let err = |message: String| GoldIoError::Row { row: i + 1, message };
            let id = row.get(id_col).ok_or_else(|| err("missing post_id".into()))?;
            let raw = row.get(label_col).ok_or_else(|| err("missing label".into()))?;
            let label: Label = raw.parse().map_err(|e: crate::label::UnknownLabel| err(e.to_string()))?;
            gold.insert(id, label).map_err(|e| err(e.to_string()))?;
        }
        Ok(gold)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), GoldIoError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["post_id", "label"])?;
        for (id, label) in &self.labels {
            w.write_record([id.as_str(), label.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl FromIterator<(String, Label)> for GoldLabels {
    /// Error labels are dropped.
    fn from_iter<T: IntoIterator<Item = (String, Label)>>(iter: T) -> Self {
        let mut g = GoldLabels::default();
        for (id, l) in iter {
            let _ = g.insert(id, l);
        }
        g
    }
}
