//! Unnormalized 2D discrete Fourier transforms of real planes.
//!
//! The spectrum is origin-at-corner (no shift). The forward transform is a
//! plain sum; the inverse carries the `1/(H·W)` factor.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexPlane {
    pub height: usize,
    pub width: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexPlane {
    pub fn zeros(height: usize, width: usize) -> Self {
        let n = height * width;
        ComplexPlane { height, width, re: vec![0.0; n], im: vec![0.0; n] }
    }

    pub fn get(&self, u: usize, v: usize) -> (f64, f64) {
        let i = u * self.width + v;
        (self.re[i], self.im[i])
    }

    pub fn energy(&self) -> f64 {
        self.re.iter().zip(&self.im).map(|(r, i)| r * r + i * i).sum()
    }
}

fn plane_dims(plane: &Tensor) -> Result<(usize, usize)> {
    match *plane.dims() {
        [h, w] => Ok((h, w)),
        [1, h, w, 1] => Ok((h, w)),
        _ => Err(Error::InvalidShape(format!(
            "expected an HxW plane, got {}",
            plane.shape()
        ))),
    }
}

/// Direct O(H²W²) summation; the reference the fast path is checked against.
pub fn dft2d_naive(plane: &Tensor) -> Result<ComplexPlane> {
    let (h, w) = plane_dims(plane)?;
    let x = plane.data();
    let mut out = ComplexPlane::zeros(h, w);
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..h {
                for j in 0..w {
                    // Reduce the phase index first to keep the angle small.
                    let pu = (u * i) % h;
                    let pv = (v * j) % w;
                    let theta = -2.0 * PI * (pu as f64 / h as f64 + pv as f64 / w as f64);
                    let xv = x[i * w + j];
                    re += xv * theta.cos();
                    im += xv * theta.sin();
                }
            }
            out.re[u * w + v] = re;
            out.im[u * w + v] = im;
        }
    }
    Ok(out)
}

/// `(cos, sin)` of `sign·2πk/n` for `k < n`.
fn twiddles(n: usize, sign: f64) -> Vec<(f64, f64)> {
    (0..n)
        .map(|k| {
            let theta = sign * 2.0 * PI * k as f64 / n as f64;
            (theta.cos(), theta.sin())
        })
        .collect()
}

/// In-place 1D transform of a strided complex sequence. `sign` is -1 for
/// forward, +1 for the (unscaled) adjoint.
fn transform_1d(re: &mut [f64], im: &mut [f64], sign: f64) {
    let n = re.len();
    if n <= 1 {
        return;
    }
    let tw = twiddles(n, sign);
    if n.is_power_of_two() {
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..len / 2 {
                    let (c, s) = tw[k * step];
                    let a = start + k;
                    let b = a + len / 2;
                    let tr = re[b] * c - im[b] * s;
                    let ti = re[b] * s + im[b] * c;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len <<= 1;
        }
    } else {
        let (sr, si) = (re.to_vec(), im.to_vec());
        for k in 0..n {
            let (mut ar, mut ai) = (0.0, 0.0);
            for j in 0..n {
                let (c, s) = tw[(k * j) % n];
                ar += sr[j] * c - si[j] * s;
                ai += sr[j] * s + si[j] * c;
            }
            re[k] = ar;
            im[k] = ai;
        }
    }
}

/// Row-column 2D transform of a complex plane in place.
fn transform_2d(plane: &mut ComplexPlane, sign: f64) {
    let (h, w) = (plane.height, plane.width);
    for r in 0..h {
        let span = r * w..(r + 1) * w;
        transform_1d(&mut plane.re[span.clone()], &mut plane.im[span], sign);
    }
    let (mut cr, mut ci) = (vec![0.0; h], vec![0.0; h]);
    for c in 0..w {
        for r in 0..h {
            cr[r] = plane.re[r * w + c];
            ci[r] = plane.im[r * w + c];
        }
        transform_1d(&mut cr, &mut ci, sign);
        for r in 0..h {
            plane.re[r * w + c] = cr[r];
            plane.im[r * w + c] = ci[r];
        }
    }
}

pub(crate) fn fft2d_slice(data: &[f64], h: usize, w: usize) -> ComplexPlane {
    let mut p = ComplexPlane { height: h, width: w, re: data.to_vec(), im: vec![0.0; h * w] };
    transform_2d(&mut p, -1.0);
    p
}

/// Separable fast transform: radix-2 along power-of-two axes, direct
/// summation along the others.
pub fn fft2d(plane: &Tensor) -> Result<ComplexPlane> {
    let (h, w) = plane_dims(plane)?;
    Ok(fft2d_slice(plane.data(), h, w))
}

/// Inverse transform, including the `1/(H·W)` factor.
pub fn ifft2d(spectrum: &ComplexPlane) -> ComplexPlane {
    let mut p = spectrum.clone();
    transform_2d(&mut p, 1.0);
    let scale = 1.0 / (p.height * p.width) as f64;
    p.re.iter_mut().chain(p.im.iter_mut()).for_each(|v| *v *= scale);
    p
}

pub fn magnitude(f: &ComplexPlane) -> Tensor {
    let data = f.re.iter().zip(&f.im).map(|(r, i)| r.hypot(*i)).collect();
    Tensor::from_vec(&[f.height, f.width], data).expect("plane extents are positive")
}

/// Gradient of `L(|DFT(x)|)` with respect to the real plane `x`, given the
/// forward spectrum and `∂L/∂|F|`: `Re(DFTᴴ(g · F/|F|))`, with zero
/// contribution where `|F| = 0`.
pub(crate) fn magnitude_backward_slice(spectrum: &ComplexPlane, upstream: &[f64]) -> Vec<f64> {
    let mut g = ComplexPlane::zeros(spectrum.height, spectrum.width);
    for (k, &up) in upstream.iter().enumerate() {
        let (re, im) = (spectrum.re[k], spectrum.im[k]);
        let mag = re.hypot(im);
        if mag > 0.0 {
            g.re[k] = up * re / mag;
            g.im[k] = up * im / mag;
        }
    }
    transform_2d(&mut g, 1.0);
    g.re
}

pub fn magnitude_backward(spectrum: &ComplexPlane, upstream: &Tensor) -> Result<Tensor> {
    if upstream.numel() != spectrum.height * spectrum.width {
        return Err(Error::ShapeMismatch(format!(
            "upstream {} for {}x{} spectrum",
            upstream.shape(),
            spectrum.height,
            spectrum.width
        )));
    }
    let data = magnitude_backward_slice(spectrum, upstream.data());
    Tensor::from_vec(&[spectrum.height, spectrum.width], data)
}

/// `|FFT2D|` of every `(sample, channel)` plane of an NHWC tensor, plus the
/// spectra needed for the adjoint.
pub fn magnitude_nhwc(x: &Tensor) -> Result<(Tensor, Vec<ComplexPlane>)> {
    let (n, h, w, c) = x.shape().nhwc()?;
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    let mut spectra = Vec::with_capacity(n * c);
    let mut plane = vec![0.0; h * w];
    for b in 0..n {
        for ch in 0..c {
            for p in 0..h * w {
                plane[p] = xd[(b * h * w + p) * c + ch];
            }
            let f = fft2d_slice(&plane, h, w);
            for p in 0..h * w {
                out[(b * h * w + p) * c + ch] = f.re[p].hypot(f.im[p]);
            }
            spectra.push(f);
        }
    }
    Ok((Tensor::from_vec(x.dims(), out)?, spectra))
}

pub fn magnitude_nhwc_backward(x_dims: &[usize], spectra: &[ComplexPlane], grad: &Tensor) -> Result<Tensor> {
    let (n, h, w, c) = (x_dims[0], x_dims[1], x_dims[2], x_dims[3]);
    let g = grad.data();
    let mut gx = vec![0.0; g.len()];
    let mut up = vec![0.0; h * w];
    for b in 0..n {
        for ch in 0..c {
            for p in 0..h * w {
                up[p] = g[(b * h * w + p) * c + ch];
            }
            let back = magnitude_backward_slice(&spectra[b * c + ch], &up);
            for p in 0..h * w {
                gx[(b * h * w + p) * c + ch] = back[p];
            }
        }
    }
    Tensor::from_vec(x_dims, gx)
}
