//! Evaluation reports: one JSON document plus CSV tables for plotting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ClassSource, SkippedFile};
use crate::error::{Error, Result};
use crate::metrics::{
    classification_metrics, mean_auc, roc_auc, Averages, Averaging, ConfusionMatrix, RocCurve,
};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub auc: Option<f64>,
}

/// Keys: `classes`, `samples`, `accuracy`, `macro`, `weighted`,
/// `per_class`, `confusion`, `mean_auc`, `zero_division`, `skipped`,
/// `class_sources`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<String>,
    pub samples: usize,
    pub accuracy: f64,
    #[serde(rename = "macro")]
    pub macro_avg: Averages,
    /// Support-weighted averages; only filled when requested.
    pub weighted: Option<Averages>,
    pub per_class: Vec<ClassReport>,
    /// Rows = true class, columns = predicted class.
    pub confusion: Vec<Vec<u64>>,
    pub mean_auc: Option<f64>,
    /// Some precision/recall/F1 was 0/0 and reported as 0.
    pub zero_division: bool,
    pub skipped: Vec<SkippedFile>,
    pub class_sources: Vec<ClassSource>,
    #[serde(skip)]
    pub roc: Vec<RocCurve>,
}

impl EvalReport {
    pub fn build(
        class_names: &[String],
        labels: &[usize],
        predictions: &[usize],
        probs: &Tensor,
        weighted: bool,
    ) -> Result<Self> {
        let c = class_names.len();
        let cm = ConfusionMatrix::new(labels, predictions, c)?;
        let m = classification_metrics(&cm)?;
        let roc = roc_auc(probs, labels)?;
        let per_class = m
            .per_class
            .iter()
            .zip(class_names)
            .zip(&roc)
            .map(|((s, name), curve)| ClassReport {
                name: name.clone(),
                precision: s.precision,
                recall: s.recall,
                f1: s.f1,
                support: s.support,
                auc: curve.auc,
            })
            .collect();
        Ok(EvalReport {
            classes: class_names.to_vec(),
            samples: labels.len(),
            accuracy: m.accuracy,
            macro_avg: m.averaged(Averaging::Macro),
            weighted: weighted.then(|| m.averaged(Averaging::Weighted)),
            per_class,
            confusion: cm.rows().map(<[u64]>::to_vec).collect(),
            mean_auc: mean_auc(&roc),
            zero_division: m.zero_division,
            skipped: Vec::new(),
            class_sources: Vec::new(),
            roc,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn write_confusion_csv(&self, path: &Path) -> Result<()> {
        let mut out = csv::Writer::from_path(path)?;
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(self.classes.iter().cloned());
        out.write_record(&header)?;
        for (name, row) in self.classes.iter().zip(&self.confusion) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(u64::to_string));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Long format: `class, threshold, fpr, tpr`; undefined curves are omitted.
    pub fn write_roc_csv(&self, path: &Path) -> Result<()> {
        let mut out = csv::Writer::from_path(path)?;
        out.write_record(["class", "threshold", "fpr", "tpr"])?;
        for curve in &self.roc {
            let name = self.classes.get(curve.class).ok_or_else(|| {
                Error::InvalidArgument(format!("ROC curve for unknown class {}", curve.class))
            })?;
            for p in &curve.points {
                out.write_record([name.clone(), p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `report.json`, `confusion.csv` and `roc.csv` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_json(&dir.join("report.json"))?;
        self.write_confusion_csv(&dir.join("confusion.csv"))?;
        self.write_roc_csv(&dir.join("roc.csv"))
    }
}
