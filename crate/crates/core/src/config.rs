//! JSON run configuration. Every key is optional; unknown keys are errors.
//!
//! ```json
//! {
//!   "data": "datasets/train",
//!   "classes": 4,
//!   "out": "runs/a",
//!   "seed": 7,
//!   "k": 5,
//!   "weighted_metrics": false,
//!   "model": { "input_size": [64, 64], "backbone_a": [8, 16, 32], ... },
//!   "train": { "optimizer": "adam", "lr": 0.0001, "batch_size": 32, ... },
//!   "sweep": { "optimizers": ["adam", "sgd"], "batch_sizes": [16], "lrs": [0.0001] },
//!   "bench": { "shapes": [[16, 16, 64]], "batch": 2, "repeats": 5 }
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::ClassMode;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::training::{SweepGrid, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub shapes: Vec<[usize; 3]>,
    pub batch: usize,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { shapes: vec![[16, 16, 16], [16, 16, 64], [32, 32, 32]], batch: 2, repeats: 5 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    /// 4, 3 or 2; absent means one class per folder.
    pub classes: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub weighted_metrics: bool,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub sweep: SweepGrid,
    pub bench: BenchConfig,
    /// Whether `train.epochs` was given explicitly (otherwise it follows
    /// the class count).
    #[serde(skip)]
    pub epochs_explicit: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        let epochs_explicit = value.pointer("/train/epochs").is_some();
        let mut cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.epochs_explicit = epochs_explicit;
        Ok(cfg)
    }

    pub fn class_mode(&self) -> Result<ClassMode> {
        self.classes.map_or(Ok(ClassMode::Folders), ClassMode::from_count)
    }

    /// Training settings for a dataset with `classes` classes.
    pub fn train_for(&self, classes: usize) -> TrainConfig {
        let mut t = self.train.clone();
        if !self.epochs_explicit {
            t.epochs = TrainConfig::default_epochs(classes);
        }
        if let Some(seed) = self.seed {
            t.seed = seed;
        }
        t
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(self.train.seed)
    }
}
