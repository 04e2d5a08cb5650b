use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{OptimizerKind, OptimizerState};
use super::derive_seed;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{argmax, ForwardMode, Model};
use crate::tensor::{ops, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Non-improving validation epochs tolerated before stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            lr: 1e-4,
            batch_size: 32,
            epochs: 30,
            early_stop_patience: 5,
            seed: 0,
            val_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    /// Default epoch budget: 30 for multi-class runs, 20 for binary.
    pub fn default_epochs(classes: usize) -> usize {
        if classes <= 2 {
            20
        } else {
            30
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!("val_fraction {} outside (0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean minibatch loss and accuracy under training-mode forward passes.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (validation runs only).
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl History {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.epochs {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Inference-mode predictions over a whole dataset.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    /// `N×C` class probabilities.
    pub probs: Tensor,
    pub predictions: Vec<usize>,
}

pub fn evaluate(model: &Model, data: &LabeledDataset, batch_size: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty dataset".into()));
    }
    let classes = model.spec().classes;
    if data.num_classes() != classes {
        return Err(Error::Dataset(format!(
            "dataset has {} classes, model {classes}",
            data.num_classes()
        )));
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut probs = Vec::with_capacity(data.len() * classes);
    let mut loss_sum = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, y) = data.batch(chunk)?;
        let p = model.infer_probs(&x)?;
        loss_sum += ops::cross_entropy(&p, &y)? * chunk.len() as f64;
        probs.extend_from_slice(p.data());
    }
    let predictions: Vec<usize> = probs.chunks(classes).map(argmax).collect();
    let correct = predictions.iter().zip(data.labels()).filter(|(p, l)| p == l).count();
    Ok(Evaluation {
        loss: loss_sum / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
        probs: Tensor::from_vec(&[data.len(), classes], probs)?,
        predictions,
    })
}

pub fn fit(model: &mut Model, train: &LabeledDataset, val: Option<&LabeledDataset>, cfg: &TrainConfig) -> Result<History> {
    fit_with(model, train, val, cfg, |_, _| Control::Continue)
}

/// Minibatch training. With a validation set, stops once validation loss
/// has failed to improve for more than `early_stop_patience` consecutive
/// epochs and restores the best epoch's parameters. `observer` runs after
/// every epoch and may stop training.
pub fn fit_with<F>(
    model: &mut Model,
    train: &LabeledDataset,
    val: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    mut observer: F,
) -> Result<History>
where
    F: FnMut(&EpochRecord, &Model) -> Control,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    if train.num_classes() != model.spec().classes {
        return Err(Error::Dataset(format!(
            "training set has {} classes, model {}",
            train.num_classes(),
            model.spec().classes
        )));
    }
    let mut opt = OptimizerState::new(cfg.optimizer);
    let mut history = History::default();
    let mut best: Option<(f64, crate::tensor::ParamStore)> = None;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1, epoch as u64]));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = train.batch(chunk)?;
            let mut tape = Tape::new();
            let xv = tape.leaf(x);
            let mode = ForwardMode::training(derive_seed(cfg.seed, &[2, epoch as u64, step as u64]));
            let out = model.forward(&mut tape, xv, mode)?;
            let loss = tape.cross_entropy(out.probs, &y)?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: epoch + 1, step: step + 1, value });
            }
            tape.backward_into(loss, model.params_mut())?;
            opt.step(model.params_mut(), cfg.lr)?;

            loss_sum += value * chunk.len() as f64;
            let classes = model.spec().classes;
            let probs = tape.value(out.probs).data();
            correct += chunk
                .iter()
                .enumerate()
                .filter(|(r, &i)| argmax(&probs[r * classes..(r + 1) * classes]) == train.labels()[i])
                .count();
        }

        let mut record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss: None,
            val_accuracy: None,
        };
        let mut stop = false;
        if let Some(val) = val {
            let ev = evaluate(model, val, cfg.batch_size)?;
            record.val_loss = Some(ev.loss);
            record.val_accuracy = Some(ev.accuracy);
            if best.as_ref().is_none_or(|(b, _)| ev.loss < *b) {
                best = Some((ev.loss, model.params().clone()));
                history.best_epoch = Some(epoch + 1);
                stale = 0;
            } else {
                stale += 1;
                stop = stale > cfg.early_stop_patience;
            }
        }
        log::info!(
            "epoch {} loss {:.4} acc {:.3} val_loss {:?} val_acc {:?}",
            record.epoch,
            record.train_loss,
            record.train_accuracy,
            record.val_loss,
            record.val_accuracy
        );
        let control = observer(&record, model);
        history.epochs.push(record);
        if stop {
            history.stopped_early = true;
            break;
        }
        if control == Control::Stop {
            break;
        }
    }
    if let Some((_, params)) = best {
        model.params_mut().copy_values_from(&params)?;
    }
    Ok(history)
}
