use serde::{Deserialize, Serialize};

use crate::data::{MultimodalSample, Preprocessor};
use crate::error::{EtmaError, Result};
use crate::model::AblationVariant;
use crate::train::{evaluate_samples, fit, EpochRecord, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    /// Test accuracy, one entry per dataset column.
    pub accuracy: Vec<f64>,
}

/// Test accuracy of every variant, one column per dataset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AblationTable {
    pub datasets: Vec<String>,
    pub rows: Vec<AblationRow>,
}

#[derive(Serialize)]
struct JsonRow<'a> {
    variant: &'a str,
    dataset: &'a str,
    accuracy: f64,
}

impl AblationTable {
    pub fn accuracy(&self, variant: AblationVariant, dataset: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.variant == variant)
            .and_then(|r| r.accuracy.get(dataset).copied())
    }

    /// Appends a dataset column. `column` must cover the same variants in
    /// the same order as the existing rows.
    pub fn add_column(&mut self, dataset: &str, column: &[(AblationVariant, f64)]) -> Result<()> {
        if self.rows.is_empty() && self.datasets.is_empty() {
            self.rows = column
                .iter()
                .map(|&(variant, _)| AblationRow {
                    variant,
                    accuracy: Vec::new(),
                })
                .collect();
        }
        let same = self.rows.len() == column.len() && self.rows.iter().zip(column).all(|(r, (v, _))| r.variant == *v);
        if !same {
            return Err(EtmaError::Contract(format!(
                "ablation column {dataset:?} does not match the table's variants"
            )));
        }
        for (row, &(_, acc)) in self.rows.iter_mut().zip(column) {
            row.accuracy.push(acc);
        }
        self.datasets.push(dataset.to_string());
        Ok(())
    }

    /// Header `variant,<dataset>...`, then one row per variant.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant");
        for d in &self.datasets {
            s.push(',');
            s.push_str(d);
        }
        s.push('\n');
        for row in &self.rows {
            s.push_str(row.variant.label());
            for a in &row.accuracy {
                s.push_str(&format!(",{a}"));
            }
            s.push('\n');
        }
        s
    }

    /// One record per (variant, dataset) cell.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut s = String::new();
        for row in &self.rows {
            for (d, &accuracy) in self.datasets.iter().zip(&row.accuracy) {
                let rec = JsonRow {
                    variant: row.variant.label(),
                    dataset: d,
                    accuracy,
                };
                s.push_str(&serde_json::to_string(&rec).map_err(|e| EtmaError::Contract(e.to_string()))?);
                s.push('\n');
            }
        }
        Ok(s)
    }
}

/// Trains and tests every variant on the same split with the same seed.
///
/// `on_epoch` is called with each variant's epoch records as they arrive.
pub fn run_ablation_suite(
    cfg: &TrainConfig,
    dataset: &str,
    samples: &[MultimodalSample],
    on_epoch: &mut dyn FnMut(AblationVariant, &EpochRecord),
) -> Result<AblationTable> {
    let column = ablation_column(cfg, samples, &AblationVariant::ALL, on_epoch)?;
    let mut table = AblationTable::default();
    table.add_column(dataset, &column)?;
    Ok(table)
}

/// Test accuracy for each of `variants`, all fitted on one split.
pub fn ablation_column(
    cfg: &TrainConfig,
    samples: &[MultimodalSample],
    variants: &[AblationVariant],
    on_epoch: &mut dyn FnMut(AblationVariant, &EpochRecord),
) -> Result<Vec<(AblationVariant, f64)>> {
    cfg.validate()?;
    let split = cfg.split.split(samples.len())?;
    let (train, val, test) = split.select(samples);
    if test.is_empty() {
        return Err(EtmaError::Config("ablation needs a nonempty test split".into()));
    }
    let pre = Preprocessor::fit(&train, cfg.n_max, cfg.min_freq, cfg.stopword_list()?)?;
    let mut out = Vec::with_capacity(variants.len());
    for &variant in variants {
        let run = TrainConfig { variant, ..cfg.clone() };
        let fitted = fit(&run, &pre, &train, &val, &mut |r| on_epoch(variant, r))?;
        let eval = evaluate_samples(&fitted.best.model, &pre, &test, cfg.eval_batch_size)?;
        out.push((variant, eval.accuracy));
    }
    Ok(out)
}
