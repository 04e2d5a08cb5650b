use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, fit, score, OptimizerKind, TrainConfig};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::parallel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub optimizers: Vec<OptimizerKind>,
    pub batch_sizes: Vec<usize>,
    pub lrs: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            optimizers: vec![OptimizerKind::Adam, OptimizerKind::Adamax, OptimizerKind::Sgd],
            batch_sizes: vec![16, 32],
            lrs: vec![1e-4, 1e-5],
        }
    }
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<(OptimizerKind, usize, f64)> {
        let mut cells = Vec::new();
        for &o in &self.optimizers {
            for &b in &self.batch_sizes {
                for &lr in &self.lrs {
                    cells.push((o, b, lr));
                }
            }
        }
        cells
    }
}

/// One grid cell; metric fields are empty when the cell failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub optimizer: OptimizerKind,
    pub batch: usize,
    pub lr: f64,
    pub acc: Option<f64>,
    #[serde(rename = "macroP")]
    pub macro_p: Option<f64>,
    #[serde(rename = "macroR")]
    pub macro_r: Option<f64>,
    #[serde(rename = "macroF1")]
    pub macro_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub optimizer: OptimizerKind,
    pub batch: usize,
    pub lr: f64,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

impl SweepReport {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn row(&self, optimizer: OptimizerKind, batch: usize, lr: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.optimizer == optimizer && r.batch == batch && r.lr == lr)
    }
}

fn run_cell(
    spec: &ModelSpec,
    train: &LabeledDataset,
    val: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<SweepRow> {
    let mut model = Model::new(spec.clone(), cfg.seed)?;
    fit(&mut model, train, Some(val), cfg)?;
    let ev = evaluate(&model, val, cfg.batch_size)?;
    let (_, m) = score(&ev, val.labels(), spec.classes)?;
    let avg = m.macro_avg();
    Ok(SweepRow {
        optimizer: cfg.optimizer,
        batch: cfg.batch_size,
        lr: cfg.lr,
        acc: Some(m.accuracy),
        macro_p: Some(avg.precision),
        macro_r: Some(avg.recall),
        macro_f1: Some(avg.f1),
    })
}

/// Trains and scores one model per grid cell, in parallel across cells.
/// Every cell starts from the same initial weights (`base.seed`). Failed
/// cells keep their row with empty metrics and are listed in `failures`.
pub fn sensitivity_sweep(
    spec: &ModelSpec,
    train: &LabeledDataset,
    val: &LabeledDataset,
    grid: &SweepGrid,
    base: &TrainConfig,
) -> Result<SweepReport> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let results: Vec<Result<SweepRow>> = parallel::pool()?.install(|| {
        cells
            .par_iter()
            .map(|&(optimizer, batch_size, lr)| {
                let cfg = TrainConfig { optimizer, batch_size, lr, ..base.clone() };
                run_cell(spec, train, val, &cfg)
            })
            .collect()
    });
    let mut report = SweepReport::default();
    for ((optimizer, batch, lr), r) in cells.into_iter().zip(results) {
        match r {
            Ok(row) => report.rows.push(row),
            Err(e) => {
                log::warn!("sweep cell {optimizer}/{batch}/{lr} failed: {e}");
                report.rows.push(SweepRow {
                    optimizer,
                    batch,
                    lr,
                    acc: None,
                    macro_p: None,
                    macro_r: None,
                    macro_f1: None,
                });
                report.failures.push(SweepFailure { optimizer, batch, lr, error: e.to_string() });
            }
        }
    }
    Ok(report)
}
