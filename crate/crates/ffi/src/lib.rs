//! C interface to trained fganet checkpoints.
//!
//! Models are opaque handles created by [`fga_model_load`] and released
//! with [`fga_model_free`]. Every fallible call returns an [`FgaStatus`];
//! on failure a message is available from [`fga_last_error`] on the same
//! thread until the next failing call. No panic crosses the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fganet::checkpoint::Checkpoint;
use fganet::data::image::load_image;
use fganet::explain::gradcam;
use fganet::model::DEFAULT_TAP;
use fganet::tensor::Tensor;
use fganet::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FgaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Checkpoint = 4,
    Decode = 5,
    InvalidShape = 6,
    InvalidArgument = 7,
    UnknownTap = 8,
    BufferTooSmall = 9,
    Panic = 10,
    Internal = 11,
}

/// A loaded checkpoint. Opaque to C.
pub struct FgaModel {
    checkpoint: Checkpoint,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', "\\0")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(FgaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => FgaStatus::Io,
            Error::Checkpoint { .. } | Error::CheckpointVersion { .. } | Error::Json(_) => FgaStatus::Checkpoint,
            Error::Decode { .. } => FgaStatus::Decode,
            Error::InvalidShape(_) | Error::ShapeMismatch(_) => FgaStatus::InvalidShape,
            Error::InvalidArgument(_) | Error::Config(_) => FgaStatus::InvalidArgument,
            Error::UnknownTap { .. } => FgaStatus::UnknownTap,
            _ => FgaStatus::Internal,
        };
        Fail(status, e.to_string())
    }
}

fn fail<T>(status: FgaStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FgaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FgaStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            FgaStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(model: *const FgaModel) -> Result<&'a FgaModel, Fail> {
    match model.as_ref() {
        Some(m) => Ok(m),
        None => fail(FgaStatus::NullPointer, "model handle is null"),
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    match p.as_mut() {
        Some(r) => Ok(r),
        None => fail(FgaStatus::NullPointer, format!("{what} is null")),
    }
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return fail(FgaStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(s).to_str().or_else(|_| fail(FgaStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, needed: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len < needed {
        return fail(FgaStatus::BufferTooSmall, format!("{what} holds {len} values, {needed} needed"));
    }
    if p.is_null() {
        return fail(FgaStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

/// Wraps `len` caller-owned `f64`s as one `H×W×C` image in `[0, 1]`.
unsafe fn image_arg(model: &FgaModel, pixels: *const f64, len: usize) -> Result<Tensor, Fail> {
    let spec = model.checkpoint.model.spec();
    let [h, w] = spec.input_size;
    let c = spec.input_channels;
    if pixels.is_null() {
        return fail(FgaStatus::NullPointer, "pixels is null");
    }
    if len != h * w * c {
        return fail(FgaStatus::InvalidShape, format!("expected {h}x{w}x{c} = {} pixels, got {len}", h * w * c));
    }
    let data = std::slice::from_raw_parts(pixels, len).to_vec();
    Ok(Tensor::from_vec(&[h, w, c], data)?)
}

fn classify(model: &FgaModel, image: &Tensor, probs: *mut f64, probs_len: usize, class: *mut usize) -> Result<(), Fail> {
    let p = model.checkpoint.model.predict(image)?;
    let class = unsafe { out_ref(class, "class")? };
    if !probs.is_null() || probs_len > 0 {
        let dst = unsafe { out_slice(probs, probs_len, p.probs.len(), "probs")? };
        dst.copy_from_slice(&p.probs);
    }
    *class = p.class;
    Ok(())
}

/// Message describing the most recent failure on this thread, or NULL.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn fga_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fga_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fga_model_load(path: *const c_char, out: *mut *mut FgaModel) -> FgaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let checkpoint = Checkpoint::load(Path::new(path))?;
        let names = checkpoint
            .class_names
            .iter()
            .map(|n| CString::new(n.as_str()))
            .collect::<Result<_, _>>()
            .or_else(|_| fail(FgaStatus::Checkpoint, "class name contains NUL"))?;
        *out = Box::into_raw(Box::new(FgaModel { checkpoint, names }));
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must come from [`fga_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fga_model_free(model: *mut FgaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fga_model_num_classes(model: *const FgaModel, out: *mut usize) -> FgaStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out_ref(out, "out")? = m.names.len();
        Ok(())
    })
}

/// Input height, width and channel count the model expects.
///
/// # Safety
/// `model` must be a live handle; the three outputs writable.
#[no_mangle]
pub unsafe extern "C" fn fga_model_input_shape(
    model: *const FgaModel,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> FgaStatus {
    guard(|| {
        let spec = model_ref(model)?.checkpoint.model.spec();
        let (h, w, c) = (out_ref(height, "height")?, out_ref(width, "width")?, out_ref(channels, "channels")?);
        [*h, *w] = spec.input_size;
        *c = spec.input_channels;
        Ok(())
    })
}

/// Name of class `index`, owned by the handle.
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fga_model_class_name(model: *const FgaModel, index: usize, out: *mut *const c_char) -> FgaStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out_ref(out, "out")?;
        match m.names.get(index) {
            Some(n) => *out = n.as_ptr(),
            None => return fail(FgaStatus::InvalidArgument, format!("class {index} out of range ({} classes)", m.names.len())),
        }
        Ok(())
    })
}

/// Classifies one preprocessed image: `pixels` is `H×W×C` row-major,
/// channels last, values in `[0, 1]`. Writes the argmax to `*class` and,
/// when `probs` is non-NULL, the class probabilities (`probs_len` must
/// cover the class count).
///
/// # Safety
/// `pixels` must point to `pixels_len` readable values, `probs` to
/// `probs_len` writable values (or be NULL with `probs_len == 0`).
#[no_mangle]
pub unsafe extern "C" fn fga_model_predict(
    model: *const FgaModel,
    pixels: *const f64,
    pixels_len: usize,
    probs: *mut f64,
    probs_len: usize,
    class: *mut usize,
) -> FgaStatus {
    guard(|| {
        let m = model_ref(model)?;
        let image = image_arg(m, pixels, pixels_len)?;
        classify(m, &image, probs, probs_len, class)
    })
}

/// Like [`fga_model_predict`], decoding and resizing an image file first
/// exactly as the command-line tool does.
///
/// # Safety
/// See [`fga_model_predict`]; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fga_model_predict_file(
    model: *const FgaModel,
    path: *const c_char,
    probs: *mut f64,
    probs_len: usize,
    class: *mut usize,
) -> FgaStatus {
    guard(|| {
        let m = model_ref(model)?;
        let path = str_arg(path, "path")?;
        let [h, w] = m.checkpoint.model.spec().input_size;
        let image = load_image(Path::new(path), h, w)?;
        classify(m, &image, probs, probs_len, class)
    })
}

/// Grad-CAM map for `class` at layer `tap` (NULL selects the default),
/// upsampled to the input size and written row-major to `out`
/// (`out_len ≥ H·W`). Values are in `[0, 1]`.
///
/// # Safety
/// `pixels` as for [`fga_model_predict`]; `out` must point to `out_len`
/// writable values; `tap` NULL or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fga_model_gradcam(
    model: *const FgaModel,
    pixels: *const f64,
    pixels_len: usize,
    class: usize,
    tap: *const c_char,
    out: *mut f64,
    out_len: usize,
) -> FgaStatus {
    guard(|| {
        let m = model_ref(model)?;
        let image = image_arg(m, pixels, pixels_len)?;
        let tap = if tap.is_null() { DEFAULT_TAP } else { str_arg(tap, "tap")? };
        if class >= m.names.len() {
            return fail(FgaStatus::InvalidArgument, format!("class {class} out of range ({} classes)", m.names.len()));
        }
        let heat = gradcam(&m.checkpoint.model, &image, class, tap)?;
        let dst = out_slice(out, out_len, heat.upsampled.numel(), "out")?;
        dst.copy_from_slice(heat.upsampled.data());
        Ok(())
    })
}
