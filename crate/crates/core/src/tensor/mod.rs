//! Dense double-precision tensors and the reverse-mode tape built on them.
//!
//! Rank-4 tensors use the sample × height × width × channel (NHWC) layout,
//! stored row-major. Every kernel in [`ops`] is a pure function on
//! [`Tensor`] values; [`Tape`] records those kernels and replays their
//! adjoints in reverse.

mod gradcheck;
mod init;
pub mod ops;
mod params;
mod tape;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gradcheck::{finite_diff_check, param_finite_diff_check};
pub use init::{tensor_init, FanKind, Init};
pub use ops::{ActivationKind, BinaryKind, ConvSpec, Padding, PoolKind, ResizeKind};
pub use params::{ParamStore, Variable};
pub use tape::{Gradients, Tape, Var};

pub const MAX_RANK: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::InvalidShape(format!(
                "rank must be 1..={MAX_RANK}, got {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidShape(format!("zero extent in {dims:?}")));
        }
        Ok(Shape(dims.to_vec()))
    }

    pub fn scalar() -> Self {
        Shape(vec![1])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// `(n, h, w, c)` of a rank-4 shape.
    pub fn nhwc(&self) -> Result<(usize, usize, usize, usize)> {
        match self.0.as_slice() {
            &[n, h, w, c] => Ok((n, h, w, c)),
            other => Err(Error::InvalidShape(format!(
                "expected rank-4 NHWC, got {other:?}"
            ))),
        }
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Shape::new(&dims)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "buffer of {} values for shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f64) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        Ok(Tensor { shape, data: vec![value; n] })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: Shape::scalar(), data: vec![value] }
    }

    pub(crate) fn zeros_like(other: &Tensor) -> Self {
        Tensor { shape: other.shape.clone(), data: vec![0.0; other.data.len()] }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "item() on tensor of shape {}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.numel() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {} into {shape}",
                self.shape
            )));
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    /// Element at NHWC coordinates of a rank-4 tensor.
    pub fn at4(&self, n: usize, y: usize, x: usize, c: usize) -> f64 {
        let d = self.shape.dims();
        self.data[((n * d[1] + y) * d[2] + x) * d[3] + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Copies sample `n` of a rank-4 tensor into a `1×H×W×C` tensor.
    pub fn sample(&self, n: usize) -> Result<Tensor> {
        let (batch, h, w, c) = self.shape.nhwc()?;
        if n >= batch {
            return Err(Error::InvalidArgument(format!("sample {n} of batch {batch}")));
        }
        let len = h * w * c;
        Tensor::from_vec(&[1, h, w, c], self.data[n * len..(n + 1) * len].to_vec())
    }

    /// Stacks equally shaped `H×W×C` (or `1×H×W×C`) tensors into a batch.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack of zero tensors".into()))?;
        let inner: Vec<usize> = match first.dims() {
            [h, w, c] => vec![*h, *w, *c],
            [1, h, w, c] => vec![*h, *w, *c],
            other => {
                return Err(Error::InvalidShape(format!("cannot stack {other:?}")));
            }
        };
        let per: usize = inner.iter().product();
        let mut data = Vec::with_capacity(per * items.len());
        for t in items {
            if t.numel() != per {
                return Err(Error::ShapeMismatch(format!(
                    "stack expects {inner:?}, got {:?}",
                    t.dims()
                )));
            }
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(&[items.len(), inner[0], inner[1], inner[2]], data)
    }
}
