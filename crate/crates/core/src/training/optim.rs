use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ParamStore;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Adamax,
    /// Plain gradient descent, no momentum.
    Sgd,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Adamax => "adamax",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "adamax" => Ok(OptimizerKind::Adamax),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Moment buffers keyed by parameter name. Adam keeps `(m, v)`, Adamax
/// `(m, u)` with `u` the exponentially weighted infinity norm.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: OptimizerKind,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind) -> Self {
        OptimizerState { kind, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter from its `grad`.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!("learning rate {lr} must be positive")));
        }
        for (name, var) in params.iter() {
            if var.trainable && !var.has_grad() {
                return Err(Error::MissingGradient(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        for (name, var) in params.iter_mut() {
            if !var.trainable {
                continue;
            }
            let n = var.value.numel();
            let grad = var.grad.data();
            let theta = var.value.data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in theta.iter_mut().zip(grad) {
                        *p -= lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
                    let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
                    for i in 0..n {
                        let g = grad[i];
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        theta[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
                    }
                }
                OptimizerKind::Adamax => {
                    let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
                    let u = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
                    for i in 0..n {
                        let g = grad[i];
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                        u[i] = (BETA2 * u[i]).max(g.abs());
                        theta[i] -= lr / c1 * m[i] / (u[i] + EPSILON);
                    }
                }
            }
        }
        Ok(())
    }
}
