use serde::{Deserialize, Serialize};

use super::{derive_seed, evaluate, fit, kfold_partition, score, stratified_split, FoldPlan, TrainConfig};
use crate::data::LabeledDataset;
use crate::error::Result;
use crate::metrics::{mean_auc, roc_auc};
use crate::model::{Model, ModelSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    /// 1-based.
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean one-vs-rest AUC over classes present in the held-out fold.
    pub auc: Option<f64>,
}

/// Arithmetic mean of the per-fold rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub k: usize,
    pub plan: FoldPlan,
    pub folds: Vec<FoldResult>,
    pub mean: FoldSummary,
}

impl FoldSummary {
    pub fn of(folds: &[FoldResult]) -> FoldSummary {
        let n = folds.len().max(1) as f64;
        let mean = |f: fn(&FoldResult) -> f64| folds.iter().map(f).sum::<f64>() / n;
        let aucs: Vec<f64> = folds.iter().filter_map(|f| f.auc).collect();
        FoldSummary {
            accuracy: mean(|f| f.accuracy),
            precision: mean(|f| f.precision),
            recall: mean(|f| f.recall),
            f1: mean(|f| f.f1),
            auc: (aucs.len() == folds.len() && !aucs.is_empty())
                .then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
        }
    }
}

impl CrossValReport {
    /// One row per fold plus a final `Mean` row.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["fold", "accuracy", "precision", "recall", "f1", "auc"])?;
        let fmt_auc = |a: Option<f64>| a.map(|v| v.to_string()).unwrap_or_default();
        for f in &self.folds {
            out.write_record([
                format!("Fold {}", f.fold),
                f.accuracy.to_string(),
                f.precision.to_string(),
                f.recall.to_string(),
                f.f1.to_string(),
                fmt_auc(f.auc),
            ])?;
        }
        let m = &self.mean;
        out.write_record([
            "Mean".to_string(),
            m.accuracy.to_string(),
            m.precision.to_string(),
            m.recall.to_string(),
            m.f1.to_string(),
            fmt_auc(m.auc),
        ])?;
        out.flush()?;
        Ok(())
    }
}

/// Stratified k-fold cross-validation. Each fold trains a fresh model on
/// the other folds (with a stratified slice of them held back for early
/// stopping) and is scored on its held-out fold.
pub fn cross_validate(spec: &ModelSpec, data: &LabeledDataset, k: usize, cfg: &TrainConfig) -> Result<CrossValReport> {
    cfg.validate()?;
    let plan = kfold_partition(data.labels(), k, cfg.seed)?;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let (train_idx, test_idx) = plan.split(f)?;
        let pool = data.subset(&train_idx)?;
        let fold_seed = derive_seed(cfg.seed, &[3, f as u64]);
        let (fit_idx, stop_idx) = stratified_split(pool.labels(), cfg.val_fraction, fold_seed)?;
        let (fit_set, stop_set) = (pool.subset(&fit_idx)?, pool.subset(&stop_idx)?);
        let test = data.subset(&test_idx)?;

        let mut model = Model::new(spec.clone(), fold_seed)?;
        fit(&mut model, &fit_set, Some(&stop_set), &TrainConfig { seed: fold_seed, ..cfg.clone() })?;
        let ev = evaluate(&model, &test, cfg.batch_size)?;
        let (_, m) = score(&ev, test.labels(), spec.classes)?;
        let avg = m.macro_avg();
        let auc = mean_auc(&roc_auc(&ev.probs, test.labels())?);
        log::info!("fold {}/{k}: accuracy {:.4}", f + 1, m.accuracy);
        folds.push(FoldResult {
            fold: f + 1,
            train_size: train_idx.len(),
            test_size: test_idx.len(),
            accuracy: m.accuracy,
            precision: avg.precision,
            recall: avg.recall,
            f1: avg.f1,
            auc,
        });
    }
    let mean = FoldSummary::of(&folds);
    Ok(CrossValReport { k, plan, folds, mean })
}
