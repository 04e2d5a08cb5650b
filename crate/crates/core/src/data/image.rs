//! PNG and PGM/PPM decoding to 8-bit RGB, model-input preprocessing, and
//! lossless PNG output.

use std::path::Path;

use image::{ImageFormat, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{ops, ResizeKind, Tensor};

/// File extensions picked up by directory loading (case-insensitive).
pub const EXTENSIONS: &[&str] = &["png", "pgm", "ppm", "pnm"];

pub fn has_supported_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.iter().any(|s| s.eq_ignore_ascii_case(e)))
}

fn decode_error(path: &Path, reason: impl ToString) -> Error {
    Error::Decode { path: path.to_path_buf(), reason: reason.to_string() }
}

/// Decodes a PNG or PNM file (format sniffed from content). Grayscale is
/// replicated into three channels, alpha dropped, 16-bit samples reduced
/// to 8 bits.
pub fn read_rgb8(path: &Path) -> Result<RgbImage> {
    let reader = ImageReader::open(path)?
        .with_guessed_format()
        .map_err(|e| decode_error(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png | ImageFormat::Pnm) => {}
        Some(other) => return Err(decode_error(path, format!("unsupported format {other:?}"))),
        None => return Err(decode_error(path, "unrecognised image format")),
    }
    let img = reader.decode().map_err(|e| decode_error(path, e))?;
    Ok(img.to_rgb8())
}

/// Bicubic resize to `out_h × out_w`, clamp to the 8-bit range, then scale
/// to `[0, 1]`. Returns `out_h × out_w × 3`.
pub fn preprocess(img: &RgbImage, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw: Vec<f64> = img.as_raw().iter().map(|&v| v as f64).collect();
    let x = Tensor::from_vec(&[1, h, w, 3], raw)?;
    let resized = if (h, w) == (out_h, out_w) {
        x
    } else {
        ops::resize(&x, out_h, out_w, ResizeKind::Bicubic)?
    };
    let data = resized.into_data().into_iter().map(|v| v.clamp(0.0, 255.0) / 255.0).collect();
    Tensor::from_vec(&[out_h, out_w, 3], data)
}

pub fn load_image(path: &Path, out_h: usize, out_w: usize) -> Result<Tensor> {
    preprocess(&read_rgb8(path)?, out_h, out_w)
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    img.save_with_format(path, ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => decode_error(path, other),
    })
}

/// Renders an `H×W×C` (or `1×H×W×C`) tensor in `[0, 1]` as grayscale RGB
/// using the channel mean.
pub fn render_gray(t: &Tensor) -> Result<RgbImage> {
    let (h, w, c) = match t.dims() {
        &[h, w, c] | &[1, h, w, c] => (h, w, c),
        other => return Err(Error::InvalidShape(format!("cannot render {other:?}"))),
    };
    let mut out = Vec::with_capacity(h * w * 3);
    for px in t.data().chunks(c) {
        let g = to_u8(px.iter().sum::<f64>() / c as f64 * 255.0);
        out.extend_from_slice(&[g, g, g]);
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, out).expect("buffer sized above"))
}

pub(crate) fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}
