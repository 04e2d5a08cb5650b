//! Forward kernels and their adjoints.
//!
//! Every `*_backward` takes the upstream gradient of the forward output and
//! returns gradients for the forward inputs. Reductions run in a fixed
//! sequential order, so results are bitwise reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

/// Pads a shape with leading ones to rank 4.
fn as_rank4(dims: &[usize]) -> [usize; 4] {
    let mut out = [1; 4];
    out[4 - dims.len()..].copy_from_slice(dims);
    out
}

/// For every flat index of `a`, the flat index of the broadcast operand `b`.
fn broadcast_index(a: &Shape, b: &Shape) -> Result<Vec<usize>> {
    if a == b {
        return Ok((0..a.numel()).collect());
    }
    if b.numel() == 1 {
        return Ok(vec![0; a.numel()]);
    }
    if a.rank() != b.rank() {
        return Err(Error::ShapeMismatch(format!("cannot broadcast {b} to {a}")));
    }
    for (&da, &db) in a.dims().iter().zip(b.dims()) {
        if db != da && db != 1 {
            return Err(Error::ShapeMismatch(format!("cannot broadcast {b} to {a}")));
        }
    }
    let ad = as_rank4(a.dims());
    let bd = as_rank4(b.dims());
    let mut stride = [0usize; 4];
    let mut acc = 1;
    for k in (0..4).rev() {
        stride[k] = if bd[k] == 1 { 0 } else { acc };
        acc *= bd[k];
    }
    let mut map = Vec::with_capacity(a.numel());
    for i0 in 0..ad[0] {
        for i1 in 0..ad[1] {
            for i2 in 0..ad[2] {
                let base = i0 * stride[0] + i1 * stride[1] + i2 * stride[2];
                for i3 in 0..ad[3] {
                    map.push(base + i3 * stride[3]);
                }
            }
        }
    }
    Ok(map)
}

/// `a (op) b`, with `b` broadcast along any extent-1 axis of `a` (or a
/// one-element `b` broadcast everywhere).
pub fn elementwise(a: &Tensor, b: &Tensor, kind: BinaryKind) -> Result<Tensor> {
    let map = broadcast_index(a.shape(), b.shape())?;
    let bd = b.data();
    let data = a
        .data()
        .iter()
        .zip(&map)
        .map(|(&x, &j)| match kind {
            BinaryKind::Add => x + bd[j],
            BinaryKind::Sub => x - bd[j],
            BinaryKind::Mul => x * bd[j],
        })
        .collect();
    Ok(Tensor::from_parts(a.shape().clone(), data))
}

pub fn elementwise_backward(
    a: &Tensor,
    b: &Tensor,
    kind: BinaryKind,
    grad: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let map = broadcast_index(a.shape(), b.shape())?;
    let g = grad.data();
    let mut gb = Tensor::zeros_like(b);
    let ga = match kind {
        BinaryKind::Add | BinaryKind::Sub => {
            let sign = if kind == BinaryKind::Add { 1.0 } else { -1.0 };
            let gbd = gb.data_mut();
            for (gi, &j) in g.iter().zip(&map) {
                gbd[j] += sign * gi;
            }
            grad.clone()
        }
        BinaryKind::Mul => {
            let (ad, bd) = (a.data(), b.data());
            let gbd = gb.data_mut();
            let mut ga = Vec::with_capacity(g.len());
            for (i, (&gi, &j)) in g.iter().zip(&map).enumerate() {
                ga.push(gi * bd[j]);
                gbd[j] += gi * ad[i];
            }
            Tensor::from_parts(a.shape().clone(), ga)
        }
    };
    Ok((ga, gb))
}

pub fn affine(x: &Tensor, scale: f64, shift: f64) -> Tensor {
    let data = x.data().iter().map(|v| scale * v + shift).collect();
    Tensor::from_parts(x.shape().clone(), data)
}

/// Leading batch extent and trailing feature length of a dense input.
fn dense_layout(x: &Tensor) -> Result<(usize, usize)> {
    match *x.dims() {
        [c] => Ok((1, c)),
        [n, c] => Ok((n, c)),
        [n, 1, 1, c] => Ok((n, c)),
        _ => Err(Error::InvalidShape(format!(
            "dense input must be C, NxC or Nx1x1xC, got {}",
            x.shape()
        ))),
    }
}

fn dense_out_dims(x: &Tensor, n: usize, out: usize) -> Vec<usize> {
    match x.dims().len() {
        1 => vec![out],
        2 => vec![n, out],
        _ => vec![n, 1, 1, out],
    }
}

fn dense_check(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<(usize, usize, usize)> {
    let (n, cin) = dense_layout(x)?;
    let (rows, cols) = match *w.dims() {
        [r, c] => (r, c),
        _ => return Err(Error::InvalidShape(format!("dense weight must be rank 2, got {}", w.shape()))),
    };
    if cols != cin {
        return Err(Error::ShapeMismatch(format!(
            "dense weight {} against input length {cin}",
            w.shape()
        )));
    }
    if let Some(b) = b {
        if b.numel() != rows {
            return Err(Error::ShapeMismatch(format!(
                "dense bias {} against {rows} rows",
                b.shape()
            )));
        }
    }
    Ok((n, cin, rows))
}

/// `y = W x (+ b)` applied to each row of `x`; `W` is `out × in`.
pub fn dense(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (n, cin, cout) = dense_check(x, w, b)?;
    let (xd, wd) = (x.data(), w.data());
    let mut out = Vec::with_capacity(n * cout);
    for s in 0..n {
        let row = &xd[s * cin..(s + 1) * cin];
        for o in 0..cout {
            let wr = &wd[o * cin..(o + 1) * cin];
            let mut acc = b.map_or(0.0, |b| b.data()[o]);
            for (wi, xi) in wr.iter().zip(row) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
    Tensor::from_vec(&dense_out_dims(x, n, cout), out)
}

pub fn dense_backward(
    x: &Tensor,
    w: &Tensor,
    has_bias: bool,
    grad: &Tensor,
) -> Result<(Tensor, Tensor, Option<Tensor>)> {
    let (n, cin, cout) = dense_check(x, w, None)?;
    let (xd, wd, g) = (x.data(), w.data(), grad.data());
    let mut gx = vec![0.0; n * cin];
    let mut gw = vec![0.0; cout * cin];
    let mut gb = vec![0.0; cout];
    for s in 0..n {
        let row = &xd[s * cin..(s + 1) * cin];
        let gxr = &mut gx[s * cin..(s + 1) * cin];
        for o in 0..cout {
            let go = g[s * cout + o];
            gb[o] += go;
            let wr = &wd[o * cin..(o + 1) * cin];
            let gwr = &mut gw[o * cin..(o + 1) * cin];
            for i in 0..cin {
                gxr[i] += go * wr[i];
                gwr[i] += go * row[i];
            }
        }
    }
    Ok((
        Tensor::from_parts(x.shape().clone(), gx),
        Tensor::from_parts(w.shape().clone(), gw),
        has_bias.then(|| Tensor::from_parts(Shape(vec![cout]), gb)),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Symmetric zero padding of `(k-1)/2`.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: Padding,
    /// One `k×k` filter per channel; the weight is `k×k×1×C`.
    pub depthwise: bool,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec { stride: 1, padding: Padding::Same, depthwise: false }
    }
}

struct ConvGeom {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    k: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    stride: usize,
}

fn conv_geom(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: ConvSpec) -> Result<ConvGeom> {
    let (n, h, wd, cin) = x.shape().nhwc()?;
    let (kh, kw, wcin, cout) = w.shape().nhwc().map_err(|_| {
        Error::InvalidShape(format!("conv weight must be k x k x Cin x Cout, got {}", w.shape()))
    })?;
    if kh != kw {
        return Err(Error::UnsupportedKernel(format!("non-square kernel {kh}x{kw}")));
    }
    if kh % 2 == 0 {
        return Err(Error::UnsupportedKernel(format!("even kernel size {kh}")));
    }
    if spec.stride < 1 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    if spec.depthwise {
        if wcin != 1 || cout != cin {
            return Err(Error::ShapeMismatch(format!(
                "depthwise weight {} for {cin} channels",
                w.shape()
            )));
        }
    } else if wcin != cin {
        return Err(Error::ShapeMismatch(format!(
            "conv weight {} against {cin} input channels",
            w.shape()
        )));
    }
    if let Some(b) = b {
        if b.numel() != cout {
            return Err(Error::ShapeMismatch(format!("conv bias {} for {cout} outputs", b.shape())));
        }
    }
    let k = kh;
    let (pad, oh, ow) = match spec.padding {
        Padding::Same => ((k - 1) / 2, h.div_ceil(spec.stride), wd.div_ceil(spec.stride)),
        Padding::Valid => {
            if h < k || wd < k {
                return Err(Error::InvalidShape(format!(
                    "valid {k}x{k} conv on {h}x{wd} input"
                )));
            }
            (0, (h - k) / spec.stride + 1, (wd - k) / spec.stride + 1)
        }
    };
    Ok(ConvGeom { n, h, w: wd, cin, cout, k, pad, oh, ow, stride: spec.stride })
}

impl ConvGeom {
    /// Input coordinate for output `o` and kernel tap `t`, if inside the image.
    #[inline]
    fn src(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let p = (o * self.stride + t) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < extent).then_some(p as usize)
    }
}

pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: ConvSpec) -> Result<Tensor> {
    let g = conv_geom(x, w, b, spec)?;
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0; g.n * g.oh * g.ow * g.cout];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let ob = ((n * g.oh + oy) * g.ow + ox) * g.cout;
                let acc = &mut out[ob..ob + g.cout];
                if let Some(b) = b {
                    acc.copy_from_slice(b.data());
                }
                for ky in 0..g.k {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    for kx in 0..g.k {
                        let Some(ix) = g.src(ox, kx, g.w) else { continue };
                        let xb = ((n * g.h + iy) * g.w + ix) * g.cin;
                        let xs = &xd[xb..xb + g.cin];
                        if spec.depthwise {
                            let wb = (ky * g.k + kx) * g.cout;
                            for c in 0..g.cin {
                                acc[c] += xs[c] * wd[wb + c];
                            }
                        } else {
                            let wb = (ky * g.k + kx) * g.cin * g.cout;
                            for (ci, &xv) in xs.iter().enumerate() {
                                let wr = &wd[wb + ci * g.cout..wb + (ci + 1) * g.cout];
                                for (a, &wv) in acc.iter_mut().zip(wr) {
                                    *a += xv * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[g.n, g.oh, g.ow, g.cout], out)
}

pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    has_bias: bool,
    spec: ConvSpec,
    grad: &Tensor,
) -> Result<(Tensor, Tensor, Option<Tensor>)> {
    let g = conv_geom(x, w, None, spec)?;
    let (xd, wd, gd) = (x.data(), w.data(), grad.data());
    let mut gx = vec![0.0; xd.len()];
    let mut gw = vec![0.0; wd.len()];
    let mut gb = vec![0.0; g.cout];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let ob = ((n * g.oh + oy) * g.ow + ox) * g.cout;
                let go = &gd[ob..ob + g.cout];
                for (b, &v) in gb.iter_mut().zip(go) {
                    *b += v;
                }
                for ky in 0..g.k {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    for kx in 0..g.k {
                        let Some(ix) = g.src(ox, kx, g.w) else { continue };
                        let xb = ((n * g.h + iy) * g.w + ix) * g.cin;
                        if spec.depthwise {
                            let wb = (ky * g.k + kx) * g.cout;
                            for c in 0..g.cin {
                                gx[xb + c] += go[c] * wd[wb + c];
                                gw[wb + c] += go[c] * xd[xb + c];
                            }
                        } else {
                            let wb = (ky * g.k + kx) * g.cin * g.cout;
                            for ci in 0..g.cin {
                                let xv = xd[xb + ci];
                                let r = wb + ci * g.cout..wb + (ci + 1) * g.cout;
                                let wr = &wd[r.clone()];
                                let gwr = &mut gw[r];
                                let mut sx = 0.0;
                                for co in 0..g.cout {
                                    sx += go[co] * wr[co];
                                    gwr[co] += go[co] * xv;
                                }
                                gx[xb + ci] += sx;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_parts(x.shape().clone(), gx),
        Tensor::from_parts(w.shape().clone(), gw),
        has_bias.then(|| Tensor::from_parts(Shape(vec![g.cout]), gb)),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    MaxPool2x2,
    /// Spatial mean per channel, `N×1×1×C`.
    GlobalAvg,
    /// Spatial max per channel, `N×1×1×C`.
    GlobalMax,
    /// Mean over channels, `N×H×W×1`.
    ChannelAvg,
    /// Max over channels, `N×H×W×1`.
    ChannelMax,
}

/// Pools `x`; max-type kinds also return the flat source index of each output.
pub fn pool(x: &Tensor, kind: PoolKind) -> Result<(Tensor, Option<Vec<usize>>)> {
    let (n, h, w, c) = x.shape().nhwc()?;
    let xd = x.data();
    let idx = |b: usize, y: usize, xx: usize, ch: usize| ((b * h + y) * w + xx) * c + ch;
    match kind {
        PoolKind::MaxPool2x2 => {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::InvalidShape(format!("maxpool2x2 needs even H, W; got {h}x{w}")));
            }
            let (oh, ow) = (h / 2, w / 2);
            let mut out = Vec::with_capacity(n * oh * ow * c);
            let mut arg = Vec::with_capacity(n * oh * ow * c);
            for b in 0..n {
                for y in 0..oh {
                    for xx in 0..ow {
                        for ch in 0..c {
                            let mut best = idx(b, 2 * y, 2 * xx, ch);
                            for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                let j = idx(b, 2 * y + dy, 2 * xx + dx, ch);
                                if xd[j] > xd[best] {
                                    best = j;
                                }
                            }
                            out.push(xd[best]);
                            arg.push(best);
                        }
                    }
                }
            }
            Ok((Tensor::from_vec(&[n, oh, ow, c], out)?, Some(arg)))
        }
        PoolKind::GlobalAvg | PoolKind::GlobalMax => {
            let is_max = kind == PoolKind::GlobalMax;
            let mut out = Vec::with_capacity(n * c);
            let mut arg = Vec::with_capacity(n * c);
            for b in 0..n {
                for ch in 0..c {
                    let mut acc = 0.0;
                    let mut best = idx(b, 0, 0, ch);
                    for y in 0..h {
                        for xx in 0..w {
                            let j = idx(b, y, xx, ch);
                            acc += xd[j];
                            if xd[j] > xd[best] {
                                best = j;
                            }
                        }
                    }
                    if is_max {
                        out.push(xd[best]);
                        arg.push(best);
                    } else {
                        out.push(acc / (h * w) as f64);
                    }
                }
            }
            Ok((Tensor::from_vec(&[n, 1, 1, c], out)?, is_max.then_some(arg)))
        }
        PoolKind::ChannelAvg | PoolKind::ChannelMax => {
            let is_max = kind == PoolKind::ChannelMax;
            let mut out = Vec::with_capacity(n * h * w);
            let mut arg = Vec::with_capacity(n * h * w);
            for p in 0..n * h * w {
                let row = &xd[p * c..(p + 1) * c];
                if is_max {
                    let mut best = 0;
                    for (k, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = k;
                        }
                    }
                    out.push(row[best]);
                    arg.push(p * c + best);
                } else {
                    out.push(row.iter().sum::<f64>() / c as f64);
                }
            }
            Ok((Tensor::from_vec(&[n, h, w, 1], out)?, is_max.then_some(arg)))
        }
    }
}

pub fn pool_backward(
    x: &Tensor,
    kind: PoolKind,
    argmax: Option<&[usize]>,
    grad: &Tensor,
) -> Result<Tensor> {
    let (n, h, w, c) = x.shape().nhwc()?;
    let g = grad.data();
    let mut gx = vec![0.0; x.numel()];
    match kind {
        PoolKind::MaxPool2x2 | PoolKind::GlobalMax | PoolKind::ChannelMax => {
            let arg = argmax.ok_or_else(|| Error::InvalidArgument("max pool without argmax".into()))?;
            for (&j, &gv) in arg.iter().zip(g) {
                gx[j] += gv;
            }
        }
        PoolKind::GlobalAvg => {
            let scale = 1.0 / (h * w) as f64;
            for b in 0..n {
                for p in 0..h * w {
                    for ch in 0..c {
                        gx[(b * h * w + p) * c + ch] = g[b * c + ch] * scale;
                    }
                }
            }
        }
        PoolKind::ChannelAvg => {
            let scale = 1.0 / c as f64;
            for p in 0..n * h * w {
                for ch in 0..c {
                    gx[p * c + ch] = g[p] * scale;
                }
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().clone(), gx))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    Sigmoid,
    /// Over the last axis.
    Softmax,
}

/// Largest `f64` below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function kept inside the open interval `(0, 1)`: where the
/// exact value rounds to 0 or 1 it is pinned to the nearest representable
/// value inside instead (`|z| ≳ 37` above, `z ≲ -708` below).
pub fn sigmoid(v: f64) -> f64 {
    let s = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

pub fn activation(x: &Tensor, kind: ActivationKind) -> Tensor {
    let data = match kind {
        ActivationKind::Relu => x.data().iter().map(|&v| if v < 0.0 { 0.0 } else { v }).collect(),
        ActivationKind::Sigmoid => x.data().iter().map(|&v| sigmoid(v)).collect(),
        ActivationKind::Softmax => {
            let last = *x.dims().last().expect("rank >= 1");
            let mut out = Vec::with_capacity(x.numel());
            for row in x.data().chunks(last) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let start = out.len();
                let mut z = 0.0;
                for &v in row {
                    let e = (v - m).exp();
                    z += e;
                    out.push(e);
                }
                for e in &mut out[start..] {
                    *e /= z;
                }
            }
            out
        }
    };
    Tensor::from_parts(x.shape().clone(), data)
}

/// Adjoint of [`activation`] given its input `x` and output `y`.
pub fn activation_backward(x: &Tensor, y: &Tensor, kind: ActivationKind, grad: &Tensor) -> Tensor {
    let g = grad.data();
    let data = match kind {
        // Subgradient at 0 is 0.
        ActivationKind::Relu => x
            .data()
            .iter()
            .zip(g)
            .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
            .collect(),
        ActivationKind::Sigmoid => y.data().iter().zip(g).map(|(&s, &gv)| gv * s * (1.0 - s)).collect(),
        ActivationKind::Softmax => {
            let last = *x.dims().last().expect("rank >= 1");
            let mut out = Vec::with_capacity(x.numel());
            for (yr, gr) in y.data().chunks(last).zip(g.chunks(last)) {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                out.extend(yr.iter().zip(gr).map(|(&p, &gv)| p * (gv - dot)));
            }
            out
        }
    };
    Tensor::from_parts(x.shape().clone(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeKind {
    Bilinear,
    Bicubic,
}

/// Catmull-Rom cubic (`a = -0.5`).
fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Source taps `(index, weight)` for each output coordinate along one axis,
/// using half-pixel centre mapping and edge clamping.
fn resize_taps(input: usize, output: usize, kind: ResizeKind) -> Vec<Vec<(usize, f64)>> {
    let scale = input as f64 / output as f64;
    let last = input as isize - 1;
    let clamp = |i: isize| i.clamp(0, last) as usize;
    (0..output)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            match kind {
                ResizeKind::Bilinear => {
                    let src = src.clamp(0.0, last as f64);
                    let i0 = src.floor() as isize;
                    let t = src - i0 as f64;
                    let i1 = (i0 + 1).min(last);
                    vec![(clamp(i0), 1.0 - t), (clamp(i1), t)]
                }
                ResizeKind::Bicubic => {
                    let i = src.floor() as isize;
                    let t = src - i as f64;
                    (-1..=2)
                        .map(|d| (clamp(i + d), cubic_weight(t - d as f64)))
                        .collect()
                }
            }
        })
        .collect()
}

/// Per-channel resize of an NHWC tensor.
pub fn resize(x: &Tensor, out_h: usize, out_w: usize, kind: ResizeKind) -> Result<Tensor> {
    let (n, h, w, c) = x.shape().nhwc()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!("resize target {out_h}x{out_w}")));
    }
    let rows = resize_taps(h, out_h, kind);
    let cols = resize_taps(w, out_w, kind);
    let xd = x.data();
    let mut out = vec![0.0; n * out_h * out_w * c];
    for b in 0..n {
        for (oy, ry) in rows.iter().enumerate() {
            for (ox, rx) in cols.iter().enumerate() {
                let ob = ((b * out_h + oy) * out_w + ox) * c;
                for &(iy, wy) in ry {
                    for &(ix, wx) in rx {
                        let wgt = wy * wx;
                        let xb = ((b * h + iy) * w + ix) * c;
                        for ch in 0..c {
                            out[ob + ch] += wgt * xd[xb + ch];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, out_h, out_w, c], out)
}

pub fn resize_backward(x_shape: &Shape, kind: ResizeKind, grad: &Tensor) -> Result<Tensor> {
    let (n, h, w, c) = x_shape.nhwc()?;
    let (_, out_h, out_w, _) = grad.shape().nhwc()?;
    let rows = resize_taps(h, out_h, kind);
    let cols = resize_taps(w, out_w, kind);
    let g = grad.data();
    let mut gx = vec![0.0; x_shape.numel()];
    for b in 0..n {
        for (oy, ry) in rows.iter().enumerate() {
            for (ox, rx) in cols.iter().enumerate() {
                let ob = ((b * out_h + oy) * out_w + ox) * c;
                for &(iy, wy) in ry {
                    for &(ix, wx) in rx {
                        let wgt = wy * wx;
                        let xb = ((b * h + iy) * w + ix) * c;
                        for ch in 0..c {
                            gx[xb + ch] += wgt * g[ob + ch];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(x_shape.clone(), gx))
}

/// Inverted-dropout multipliers: 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask(len: usize, rate: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    let keep = 1.0 / (1.0 - rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect())
}

pub fn dropout(x: &Tensor, rate: f64, training: bool, seed: u64) -> Result<Tensor> {
    let mask = dropout_mask(x.numel(), rate, seed)?;
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok(Tensor::from_parts(x.shape().clone(), data))
}

/// Concatenates NHWC tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
    let (n, h, w, _) = first.shape().nhwc()?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (pn, ph, pw, pc) = p.shape().nhwc()?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::ShapeMismatch(format!(
                "concat of {} with {}",
                first.shape(),
                p.shape()
            )));
        }
        widths.push(pc);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(n * h * w * total);
    for pix in 0..n * h * w {
        for (p, &pc) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.data()[pix * pc..(pix + 1) * pc]);
        }
    }
    Tensor::from_vec(&[n, h, w, total], out)
}

pub fn concat_channels_backward(shapes: &[Shape], grad: &Tensor) -> Result<Vec<Tensor>> {
    let (n, h, w, total) = grad.shape().nhwc()?;
    let widths: Vec<usize> = shapes.iter().map(|s| s.dims()[3]).collect();
    let mut outs: Vec<Vec<f64>> = widths.iter().map(|&c| Vec::with_capacity(n * h * w * c)).collect();
    let g = grad.data();
    for pix in 0..n * h * w {
        let mut off = pix * total;
        for (o, &c) in outs.iter_mut().zip(&widths) {
            o.extend_from_slice(&g[off..off + c]);
            off += c;
        }
    }
    Ok(outs
        .into_iter()
        .zip(shapes)
        .map(|(d, s)| Tensor::from_parts(s.clone(), d))
        .collect())
}

/// Additive floor inside the logarithm of the cross-entropy.
pub const LOG_EPS: f64 = 1e-12;

/// Batch mean of `-Σ y log(p + ε)` over rows of `probs` (`N×C`).
pub fn cross_entropy(probs: &Tensor, onehot: &Tensor) -> Result<f64> {
    if probs.shape() != onehot.shape() || probs.dims().len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "cross-entropy of {} against {}",
            probs.shape(),
            onehot.shape()
        )));
    }
    let n = probs.dims()[0];
    let total: f64 = probs
        .data()
        .iter()
        .zip(onehot.data())
        .map(|(&p, &y)| if y != 0.0 { -y * (p + LOG_EPS).ln() } else { 0.0 })
        .sum();
    Ok(total / n as f64)
}

pub fn cross_entropy_backward(probs: &Tensor, onehot: &Tensor, grad: f64) -> Tensor {
    let n = probs.dims()[0] as f64;
    let data = probs
        .data()
        .iter()
        .zip(onehot.data())
        .map(|(&p, &y)| -grad * y / ((p + LOG_EPS) * n))
        .collect();
    Tensor::from_parts(probs.shape().clone(), data)
}
