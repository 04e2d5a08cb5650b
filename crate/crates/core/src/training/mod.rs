//! Optimizers, data splitting, the training loop, and the experiment
//! drivers built on it (hyperparameter sweep, k-fold cross-validation).

mod crossval;
mod fit;
mod optim;
mod split;
mod sweep;

pub use crossval::{cross_validate, CrossValReport, FoldResult, FoldSummary};
pub use fit::{evaluate, fit, fit_with, Control, EpochRecord, Evaluation, History, TrainConfig};
pub use optim::{OptimizerKind, OptimizerState, BETA1, BETA2, EPSILON};
pub use split::{kfold_partition, stratified_split, val_count, FoldPlan};
pub use sweep::{sensitivity_sweep, SweepFailure, SweepGrid, SweepReport, SweepRow};

use crate::error::Result;
use crate::metrics::{classification_metrics, ClassificationMetrics, ConfusionMatrix};

/// Mixes a base seed with stream identifiers (SplitMix64 finaliser), so
/// every epoch, step, fold and sweep cell gets an independent stream.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

pub(crate) fn score(ev: &Evaluation, labels: &[usize], classes: usize) -> Result<(ConfusionMatrix, ClassificationMetrics)> {
    let cm = ConfusionMatrix::new(labels, &ev.predictions, classes)?;
    let m = classification_metrics(&cm)?;
    Ok((cm, m))
}
