//! Grad-CAM heatmaps and their colour overlays.

use std::path::Path;

use image::RgbImage;

use crate::data::image::{render_gray, to_u8, write_png};
use crate::error::{Error, Result};
use crate::model::{ForwardMode, Model};
use crate::tensor::{ops, ResizeKind, Tape, Tensor};

pub const DEFAULT_ALPHA: f64 = 0.4;

#[derive(Clone, Debug)]
pub struct Heatmap {
    /// `h×w` map at the tap's resolution, in `[0, 1]`.
    pub values: Tensor,
    /// `H×W` bilinear upsampling to the model input size.
    pub upsampled: Tensor,
    pub tap: String,
    pub class: usize,
}

fn as_batch_of_one(image: &Tensor) -> Result<Tensor> {
    match image.dims() {
        &[h, w, c] => image.reshape(&[1, h, w, c]),
        &[1, _, _, _] => Ok(image.clone()),
        other => Err(Error::InvalidShape(format!("expected one H×W×C image, got {other:?}"))),
    }
}

/// Activation of `tap` and the gradient of the pre-softmax logit of
/// `class` with respect to it, both `1×h×w×K`.
pub fn tap_gradient(model: &Model, image: &Tensor, class: usize, tap: &str) -> Result<(Tensor, Tensor)> {
    let classes = model.spec().classes;
    if class >= classes {
        return Err(Error::InvalidArgument(format!("class {class} outside 0..{classes}")));
    }
    let x = as_batch_of_one(image)?;
    let mut tape = Tape::new();
    let xv = tape.leaf(x);
    let out = model.forward(&mut tape, xv, ForwardMode::INFERENCE)?;
    let a = *out.taps.get(tap).ok_or_else(|| Error::UnknownTap {
        requested: tap.to_string(),
        available: out.taps.keys().cloned().collect(),
    })?;
    let mut select = vec![0.0; classes];
    select[class] = 1.0;
    let select = tape.leaf(Tensor::from_vec(&[1, classes], select)?);
    let picked = tape.mul(out.logits, select)?;
    let logit = tape.sum(picked)?;
    let grads = tape.backward(logit)?;
    let activation = tape.value(a).clone();
    let grad = grads.get(a).cloned().unwrap_or_else(|| Tensor::zeros_like(&activation));
    Ok((activation, grad))
}

/// `ReLU(Σ_k α_k A_k)` with `α_k` the spatial mean of `∂y/∂A_k`, for
/// `1×h×w×K` inputs. Returns the raw `h×w` map.
pub fn cam_from_gradients(activation: &Tensor, grad: &Tensor) -> Result<Tensor> {
    let (n, h, w, k) = activation.shape().nhwc()?;
    if n != 1 || grad.dims() != activation.dims() {
        return Err(Error::ShapeMismatch(format!(
            "activation {} vs gradient {}",
            activation.shape(),
            grad.shape()
        )));
    }
    let mut alpha = vec![0.0; k];
    for px in grad.data().chunks(k) {
        for (a, g) in alpha.iter_mut().zip(px) {
            *a += g;
        }
    }
    alpha.iter_mut().for_each(|a| *a /= (h * w) as f64);
    let map = activation
        .data()
        .chunks(k)
        .map(|px| px.iter().zip(&alpha).map(|(v, a)| v * a).sum::<f64>().max(0.0))
        .collect();
    Tensor::from_vec(&[h, w], map)
}

/// Divides by the maximum; an all-zero (or non-positive) map stays zero.
pub fn normalize(map: &Tensor) -> Tensor {
    let max = map.data().iter().copied().fold(0.0, f64::max);
    let mut out = map.clone();
    if max > 0.0 {
        out.data_mut().iter_mut().for_each(|v| *v = (*v / max).clamp(0.0, 1.0));
    } else {
        out.data_mut().fill(0.0);
    }
    out
}

pub fn gradcam(model: &Model, image: &Tensor, class: usize, tap: &str) -> Result<Heatmap> {
    let (activation, grad) = tap_gradient(model, image, class, tap)?;
    let values = normalize(&cam_from_gradients(&activation, &grad)?);
    let [ih, iw] = model.spec().input_size;
    let upsampled = upsample(&values, ih, iw)?;
    Ok(Heatmap { values, upsampled, tap: tap.to_string(), class })
}

fn upsample(map: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w) = match map.dims() {
        &[h, w] => (h, w),
        other => return Err(Error::InvalidShape(format!("heatmap must be h×w, got {other:?}"))),
    };
    if (h, w) == (out_h, out_w) {
        return Ok(map.clone());
    }
    let up = ops::resize(&map.reshape(&[1, h, w, 1])?, out_h, out_w, ResizeKind::Bilinear)?;
    let data = up.into_data().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Tensor::from_vec(&[out_h, out_w], data)
}

/// Piecewise-linear blue → green → red.
pub fn colormap(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.5 {
        let t = v * 2.0;
        [0.0, t, 1.0 - t]
    } else {
        let t = (v - 0.5) * 2.0;
        [t, 1.0 - t, 0.0]
    }
}

/// Blends the colour-mapped heatmap over a grayscale rendering of `image`
/// (`H×W×C` in `[0, 1]`): `(1-α)·gray + α·colour`.
pub fn overlay(image: &Tensor, heat: &Tensor, alpha: f64) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    let base = render_gray(image)?;
    let (w, h) = (base.width() as usize, base.height() as usize);
    if heat.dims() != [h, w] {
        return Err(Error::ShapeMismatch(format!("heatmap {} for a {h}x{w} image", heat.shape())));
    }
    let mut out = base.into_raw();
    for (px, &v) in out.chunks_mut(3).zip(heat.data()) {
        let colour = colormap(v);
        for (p, c) in px.iter_mut().zip(colour) {
            *p = to_u8((1.0 - alpha) * *p as f64 + alpha * c * 255.0);
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, out).expect("same size as base"))
}

pub fn emit_overlay(path: &Path, image: &Tensor, heat: &Tensor, alpha: f64) -> Result<()> {
    write_png(path, &overlay(image, heat, alpha)?)
}

/// `<input-stem>.<class-name>.cam.png`
pub fn overlay_file_name(input: &Path, class_name: &str) -> String {
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    format!("{stem}.{class_name}.cam.png")
}
