//! Classification metrics with fake as the positive class.

mod curves;


use serde::{Deserialize, Serialize};

pub use curves::{pairwise_auc, pr_auc, pr_curve, roc_auc, roc_curve, PrCurve, PrPoint, RocCurve, RocPoint};

use crate::data::Label;
use crate::error::{EtmaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionMatrix {
    /// `predicted` and `actual` hold labels, `1` meaning fake.
    pub fn from_labels(predicted: &[usize], actual: &[usize]) -> Self {
        let mut m = ConfusionMatrix::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p == 1, a == 1) {
                (true, true) => m.tp += 1,
                (true, false) => m.fp += 1,
                (false, false) => m.tn += 1,
                (false, true) => m.fn_ += 1,
            }
        }
        m
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn fake(&self) -> ClassMetrics {
        ClassMetrics::new(self.tp, self.fp, self.fn_)
    }

    pub fn real(&self) -> ClassMetrics {
        ClassMetrics::new(self.tn, self.fn_, self.fp)
    }
}

/// `a / b`, or 0 when `b` is 0.
fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassMetrics {
    /// Undefined ratios are reported as 0.
    pub fn new(hits: usize, false_alarms: usize, misses: usize) -> Self {
        let precision = ratio(hits, hits + false_alarms);
        let recall = ratio(hits, hits + misses);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub accuracy: f64,
    pub real: ClassMetrics,
    pub fake: ClassMetrics,
    /// Absent when the scored set has a single class.
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
}

/// `(P(fake), label)` per sample, the input to [`evaluate`].
pub type Scored = (f64, Label);

/// Hard predictions threshold `P(fake)` at 0.5 (a tie counts as real).
pub fn evaluate(scores: &[Scored]) -> Result<MetricsReport> {
    if scores.is_empty() {
        return Err(EtmaError::Contract("no scores to evaluate".into()));
    }
    let predicted: Vec<usize> = scores.iter().map(|&(s, _)| usize::from(s > 0.5)).collect();
    let actual: Vec<usize> = scores.iter().map(|&(_, l)| l.index()).collect();
    let cm = ConfusionMatrix::from_labels(&predicted, &actual);
    let s: Vec<f64> = scores.iter().map(|&(s, _)| s).collect();
    let pos: Vec<bool> = actual.iter().map(|&a| a == 1).collect();
    Ok(MetricsReport {
        n: scores.len(),
        accuracy: cm.accuracy(),
        real: cm.real(),
        fake: cm.fake(),
        roc_auc: roc_auc(&s, &pos).ok(),
        pr_auc: pr_auc(&s, &pos).ok(),
    })
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "acc,real_precision,real_recall,real_f1,fake_precision,fake_recall,fake_f1,roc_auc,pr_auc";

    pub fn to_json_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Header plus one row; missing AUCs are empty fields.
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
        format!(
            "{}\n{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{}\n",
            Self::CSV_HEADER,
            self.accuracy,
            self.real.precision,
            self.real.recall,
            self.real.f1,
            self.fake.precision,
            self.fake.recall,
            self.fake.f1,
            opt(self.roc_auc),
            opt(self.pr_auc)
        )
    }

    /// Reads back [`to_csv`](Self::to_csv) output. The sample count is not
    /// part of the row and is passed in.
    pub fn from_csv(text: &str, n: usize) -> Result<Self> {
        let err = |line: usize, message: String| EtmaError::Parse {
            source_name: "metrics csv".into(),
            line,
            message,
        };
        let mut lines = text.lines();
        if lines.next() != Some(Self::CSV_HEADER) {
            return Err(err(1, format!("header must be {}", Self::CSV_HEADER)));
        }
        let row = lines.next().ok_or_else(|| err(2, "missing row".into()))?;
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 9 {
            return Err(err(2, format!("expected 9 fields, found {}", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(2, format!("{s:?}: {e}")));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        let class = |i: usize| -> Result<ClassMetrics> {
            Ok(ClassMetrics {
                precision: num(fields[i])?,
                recall: num(fields[i + 1])?,
                f1: num(fields[i + 2])?,
            })
        };
        Ok(MetricsReport {
            n,
            accuracy: num(fields[0])?,
            real: class(1)?,
            fake: class(4)?,
            roc_auc: opt(fields[7])?,
            pr_auc: opt(fields[8])?,
        })
    }
}
