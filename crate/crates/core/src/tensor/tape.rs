//! Reverse-mode tape.
//!
//! Each recorded node owns its forward value and whatever the adjoint needs
//! (argmax indices, dropout masks, spectra). Nodes are appended in execution
//! order, so every input precedes its consumer and the backward pass is a
//! single reverse sweep.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::ops::{self, ActivationKind, BinaryKind, ConvSpec, PoolKind, ResizeKind};
use super::{ParamStore, Shape, Tensor};
use crate::error::{Error, Result};
use crate::spectral::{self, ComplexPlane};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

enum Op {
    Leaf,
    Binary { kind: BinaryKind, a: usize, b: usize },
    Affine { x: usize, scale: f64 },
    Dense { x: usize, w: usize, b: Option<usize> },
    Conv { x: usize, w: usize, b: Option<usize>, spec: ConvSpec },
    Pool { x: usize, kind: PoolKind, argmax: Option<Vec<usize>> },
    Activation { x: usize, kind: ActivationKind },
    Resize { x: usize, kind: ResizeKind },
    Dropout { x: usize, mask: Vec<f64> },
    Concat { parts: Vec<usize> },
    Reshape { x: usize },
    SpectralMagnitude { x: usize, spectra: Vec<ComplexPlane> },
    Sum { x: usize },
    Mean { x: usize },
    CrossEntropy { probs: usize, target: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    bindings: BTreeMap<String, Var>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward sweep, indexed by [`Var`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `var` did not influence the loss (or is from another tape).
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            bindings: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::MissingTape(format!(
                "variable from tape {} used on tape {}",
                v.tape, self.id
            )));
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    /// Records a constant or input tensor.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a named parameter as a leaf; binding the same name twice yields
    /// the same handle, so shared weights accumulate into one gradient.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.bindings.get(name) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.leaf(value);
        self.bindings.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bindings(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.bindings.iter()
    }

    /// Forward value of `v`.
    ///
    /// Panics if `v` was recorded on a different tape.
    pub fn value(&self, v: Var) -> &Tensor {
        let i = self.index(v).expect("variable belongs to this tape");
        &self.nodes[i].value
    }

    pub fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let y = ops::elementwise(&self.nodes[ia].value, &self.nodes[ib].value, kind)?;
        Ok(self.push(y, Op::Binary { kind, a: ia, b: ib }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul)
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let ix = self.index(x)?;
        let y = ops::affine(&self.nodes[ix].value, scale, shift);
        Ok(self.push(y, Op::Affine { x: ix, scale }))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (ix, iw) = (self.index(x)?, self.index(w)?);
        let ib = b.map(|b| self.index(b)).transpose()?;
        let y = ops::dense(
            &self.nodes[ix].value,
            &self.nodes[iw].value,
            ib.map(|i| &self.nodes[i].value),
        )?;
        Ok(self.push(y, Op::Dense { x: ix, w: iw, b: ib }))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let (ix, iw) = (self.index(x)?, self.index(w)?);
        let ib = b.map(|b| self.index(b)).transpose()?;
        let y = ops::conv2d(
            &self.nodes[ix].value,
            &self.nodes[iw].value,
            ib.map(|i| &self.nodes[i].value),
            spec,
        )?;
        Ok(self.push(y, Op::Conv { x: ix, w: iw, b: ib, spec }))
    }

    pub fn pool(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let ix = self.index(x)?;
        let (y, argmax) = ops::pool(&self.nodes[ix].value, kind)?;
        Ok(self.push(y, Op::Pool { x: ix, kind, argmax }))
    }

    pub fn activation(&mut self, x: Var, kind: ActivationKind) -> Result<Var> {
        let ix = self.index(x)?;
        let y = ops::activation(&self.nodes[ix].value, kind);
        Ok(self.push(y, Op::Activation { x: ix, kind }))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, ActivationKind::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, ActivationKind::Sigmoid)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.activation(x, ActivationKind::Softmax)
    }

    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize, kind: ResizeKind) -> Result<Var> {
        let ix = self.index(x)?;
        let y = ops::resize(&self.nodes[ix].value, out_h, out_w, kind)?;
        Ok(self.push(y, Op::Resize { x: ix, kind }))
    }

    /// Inverted dropout; the identity (no node recorded) outside training.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, seed: u64) -> Result<Var> {
        let ix = self.index(x)?;
        let mask = ops::dropout_mask(self.nodes[ix].value.numel(), rate, seed)?;
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let src = &self.nodes[ix].value;
        let data = src.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let y = Tensor::from_parts(src.shape().clone(), data);
        Ok(self.push(y, Op::Dropout { x: ix, mask }))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&p| self.index(p)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = idx.iter().map(|&i| &self.nodes[i].value).collect();
        let y = ops::concat_channels(&refs)?;
        Ok(self.push(y, Op::Concat { parts: idx }))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let ix = self.index(x)?;
        let y = self.nodes[ix].value.reshape(dims)?;
        Ok(self.push(y, Op::Reshape { x: ix }))
    }

    /// `|FFT2D|` applied per sample and channel of an NHWC tensor.
    pub fn fft_magnitude(&mut self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let (y, spectra) = spectral::magnitude_nhwc(&self.nodes[ix].value)?;
        Ok(self.push(y, Op::SpectralMagnitude { x: ix, spectra }))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let y = Tensor::scalar(self.nodes[ix].value.sum());
        Ok(self.push(y, Op::Sum { x: ix }))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let t = &self.nodes[ix].value;
        let y = Tensor::scalar(t.sum() / t.numel() as f64);
        Ok(self.push(y, Op::Mean { x: ix }))
    }

    /// Batch-mean categorical cross-entropy of `probs` (`N×C`) against
    /// constant one-hot targets.
    pub fn cross_entropy(&mut self, probs: Var, onehot: &Tensor) -> Result<Var> {
        let ip = self.index(probs)?;
        let loss = ops::cross_entropy(&self.nodes[ip].value, onehot)?;
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { probs: ip, target: onehot.clone() }))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let il = self.index(loss)?;
        if self.nodes[il].value.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward from non-scalar of shape {}",
                self.nodes[il].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; il + 1];
        grads[il] = Some(Tensor::from_parts(self.nodes[il].value.shape().clone(), vec![1.0]));
        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { tape: self.id, grads })
    }

    /// Zeroes `store`'s gradients, runs [`Tape::backward`], and accumulates
    /// the result into the bound parameters.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        store.zero_grad();
        let grads = self.backward(loss)?;
        store.accumulate(self, &grads)?;
        Ok(grads)
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |j: usize| &self.nodes[j].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Binary { kind, a, b } => {
                let (ga, gb) = ops::elementwise_backward(val(*a), val(*b), *kind, g)?;
                accumulate(&mut grads[*a], ga);
                accumulate(&mut grads[*b], gb);
            }
            Op::Affine { x, scale } => {
                accumulate(&mut grads[*x], ops::affine(g, *scale, 0.0));
            }
            Op::Dense { x, w, b } => {
                let (gx, gw, gb) = ops::dense_backward(val(*x), val(*w), b.is_some(), g)?;
                accumulate(&mut grads[*x], gx);
                accumulate(&mut grads[*w], gw);
                if let (Some(b), Some(gb)) = (b, gb) {
                    let gb = gb.reshape(val(*b).dims())?;
                    accumulate(&mut grads[*b], gb);
                }
            }
            Op::Conv { x, w, b, spec } => {
                let (gx, gw, gb) = ops::conv2d_backward(val(*x), val(*w), b.is_some(), *spec, g)?;
                accumulate(&mut grads[*x], gx);
                accumulate(&mut grads[*w], gw);
                if let (Some(b), Some(gb)) = (b, gb) {
                    let gb = gb.reshape(val(*b).dims())?;
                    accumulate(&mut grads[*b], gb);
                }
            }
            Op::Pool { x, kind, argmax } => {
                let gx = ops::pool_backward(val(*x), *kind, argmax.as_deref(), g)?;
                accumulate(&mut grads[*x], gx);
            }
            Op::Activation { x, kind } => {
                let gx = ops::activation_backward(val(*x), val(i), *kind, g);
                accumulate(&mut grads[*x], gx);
            }
            Op::Resize { x, kind } => {
                let gx = ops::resize_backward(val(*x).shape(), *kind, g)?;
                accumulate(&mut grads[*x], gx);
            }
            Op::Dropout { x, mask } => {
                let data = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                accumulate(&mut grads[*x], Tensor::from_parts(g.shape().clone(), data));
            }
            Op::Concat { parts } => {
                let shapes: Vec<Shape> = parts.iter().map(|&p| val(p).shape().clone()).collect();
                for (&p, gp) in parts.iter().zip(ops::concat_channels_backward(&shapes, g)?) {
                    accumulate(&mut grads[p], gp);
                }
            }
            Op::Reshape { x } => {
                accumulate(&mut grads[*x], g.reshape(val(*x).dims())?);
            }
            Op::SpectralMagnitude { x, spectra } => {
                let gx = spectral::magnitude_nhwc_backward(val(*x).dims(), spectra, g)?;
                accumulate(&mut grads[*x], gx);
            }
            Op::Sum { x } => {
                let gx = Tensor::from_parts(val(*x).shape().clone(), vec![g.data()[0]; val(*x).numel()]);
                accumulate(&mut grads[*x], gx);
            }
            Op::Mean { x } => {
                let n = val(*x).numel();
                let gx = Tensor::from_parts(val(*x).shape().clone(), vec![g.data()[0] / n as f64; n]);
                accumulate(&mut grads[*x], gx);
            }
            Op::CrossEntropy { probs, target } => {
                let gp = ops::cross_entropy_backward(val(*probs), target, g.data()[0]);
                accumulate(&mut grads[*probs], gp);
            }
        }
        Ok(())
    }
}
