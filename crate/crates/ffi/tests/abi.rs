use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use fganet::checkpoint::Checkpoint;
use fganet::data::image::{load_image, write_png};
use fganet::explain::gradcam;
use fganet::{Model, ModelSpec};
use fganet_ffi::*;

const SIZE: usize = 12;

fn checkpoint(dir: &Path) -> (PathBuf, Checkpoint) {
    let model = Model::new(ModelSpec::tiny(SIZE, 3), 7).unwrap();
    let ck = Checkpoint::new(model, vec!["glioma".into(), "meningioma".into(), "pituitary".into()]).unwrap();
    let path = dir.join("m.fgaw");
    ck.save(&path).unwrap();
    (path, ck)
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn pixels() -> Vec<f64> {
    (0..SIZE * SIZE * 3).map(|i| ((i * 37) % 101) as f64 / 100.0).collect()
}

fn last_error() -> String {
    let p = fga_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Handle(*mut FgaModel);

impl Drop for Handle {
    fn drop(&mut self) {
        unsafe { fga_model_free(self.0) }
    }
}

fn load(path: &Path) -> Handle {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { fga_model_load(cstr(path).as_ptr(), &mut h) }, FgaStatus::Ok);
    assert!(!h.is_null());
    Handle(h)
}

#[test]
fn metadata_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = checkpoint(dir.path());
    let m = load(&path);
    let mut n = 0;
    assert_eq!(unsafe { fga_model_num_classes(m.0, &mut n) }, FgaStatus::Ok);
    assert_eq!(n, 3);
    let (mut h, mut w, mut c) = (0, 0, 0);
    assert_eq!(unsafe { fga_model_input_shape(m.0, &mut h, &mut w, &mut c) }, FgaStatus::Ok);
    assert_eq!((h, w, c), (SIZE, SIZE, 3));
    let mut name = ptr::null();
    assert_eq!(unsafe { fga_model_class_name(m.0, 1, &mut name) }, FgaStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(name) }.to_str().unwrap(), "meningioma");
    assert_eq!(unsafe { fga_model_class_name(m.0, 3, &mut name) }, FgaStatus::InvalidArgument);
    assert!(last_error().contains("out of range"));
    let v = unsafe { CStr::from_ptr(fga_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn predict_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, ck) = checkpoint(dir.path());
    let m = load(&path);
    let px = pixels();
    let mut probs = [0.0; 3];
    let mut class = usize::MAX;
    let st = unsafe { fga_model_predict(m.0, px.as_ptr(), px.len(), probs.as_mut_ptr(), probs.len(), &mut class) };
    assert_eq!(st, FgaStatus::Ok);
    let image = fganet::Tensor::from_vec(&[SIZE, SIZE, 3], px.clone()).unwrap();
    let want = ck.model.predict(&image).unwrap();
    assert_eq!(class, want.class);
    assert_eq!(probs.to_vec(), want.probs);

    let mut class_only = usize::MAX;
    let st = unsafe { fga_model_predict(m.0, px.as_ptr(), px.len(), ptr::null_mut(), 0, &mut class_only) };
    assert_eq!(st, FgaStatus::Ok);
    assert_eq!(class_only, class);
}

#[test]
fn predict_file_matches_the_cli_preprocessing() {
    let dir = tempfile::tempdir().unwrap();
    let (path, ck) = checkpoint(dir.path());
    let img = dir.path().join("x.png");
    write_png(&img, &image::RgbImage::from_fn(20, 17, |x, y| image::Rgb([(x * 12) as u8, (y * 14) as u8, 90]))).unwrap();
    let m = load(&path);
    let mut probs = [0.0; 3];
    let mut class = 0;
    let st = unsafe { fga_model_predict_file(m.0, cstr(&img).as_ptr(), probs.as_mut_ptr(), 3, &mut class) };
    assert_eq!(st, FgaStatus::Ok, "{}", last_error());
    let want = ck.model.predict(&load_image(&img, SIZE, SIZE).unwrap()).unwrap();
    assert_eq!(probs.to_vec(), want.probs);

    let st = unsafe { fga_model_predict_file(m.0, cstr(&dir.path().join("nope.png")).as_ptr(), probs.as_mut_ptr(), 3, &mut class) };
    assert_eq!(st, FgaStatus::Io);
}

#[test]
fn gradcam_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, ck) = checkpoint(dir.path());
    let m = load(&path);
    let px = pixels();
    let image = fganet::Tensor::from_vec(&[SIZE, SIZE, 3], px.clone()).unwrap();
    let mut out = vec![f64::NAN; SIZE * SIZE];
    let tap = CString::new("attn_a").unwrap();
    for (tap_ptr, tap_name) in [(ptr::null(), "fuse"), (tap.as_ptr(), "attn_a")] {
        let st = unsafe { fga_model_gradcam(m.0, px.as_ptr(), px.len(), 2, tap_ptr, out.as_mut_ptr(), out.len()) };
        assert_eq!(st, FgaStatus::Ok, "{}", last_error());
        let want = gradcam(&ck.model, &image, 2, tap_name).unwrap();
        assert_eq!(out, want.upsampled.data());
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn failures_set_status_and_message() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = checkpoint(dir.path());
    let mut h = ptr::null_mut();

    assert_eq!(unsafe { fga_model_load(ptr::null(), &mut h) }, FgaStatus::NullPointer);
    assert!(h.is_null());
    assert_eq!(unsafe { fga_model_load(cstr(&path).as_ptr(), ptr::null_mut()) }, FgaStatus::NullPointer);
    let missing = dir.path().join("missing.fgaw");
    assert_eq!(unsafe { fga_model_load(cstr(&missing).as_ptr(), &mut h) }, FgaStatus::Io);
    assert!(last_error().contains("missing.fgaw"));
    let junk = dir.path().join("junk.fgaw");
    std::fs::write(&junk, b"not a checkpoint at all").unwrap();
    assert_eq!(unsafe { fga_model_load(cstr(&junk).as_ptr(), &mut h) }, FgaStatus::Checkpoint);
    let bad_utf8 = [0xffu8, 0xfe, 0];
    assert_eq!(unsafe { fga_model_load(bad_utf8.as_ptr().cast(), &mut h) }, FgaStatus::InvalidUtf8);

    let mut n = 0;
    assert_eq!(unsafe { fga_model_num_classes(ptr::null(), &mut n) }, FgaStatus::NullPointer);
    assert_eq!(last_error(), "model handle is null");

    let m = load(&path);
    let px = pixels();
    let mut probs = [0.0; 2];
    let mut class = 0;
    let st = unsafe { fga_model_predict(m.0, px.as_ptr(), px.len() - 1, ptr::null_mut(), 0, &mut class) };
    assert_eq!(st, FgaStatus::InvalidShape);
    let st = unsafe { fga_model_predict(m.0, px.as_ptr(), px.len(), probs.as_mut_ptr(), probs.len(), &mut class) };
    assert_eq!(st, FgaStatus::BufferTooSmall);
    assert!(last_error().contains("3 needed"));

    let mut out = vec![0.0; SIZE * SIZE];
    let tap = CString::new("nowhere").unwrap();
    let st = unsafe { fga_model_gradcam(m.0, px.as_ptr(), px.len(), 0, tap.as_ptr(), out.as_mut_ptr(), out.len()) };
    assert_eq!(st, FgaStatus::UnknownTap);
    let st = unsafe { fga_model_gradcam(m.0, px.as_ptr(), px.len(), 9, ptr::null(), out.as_mut_ptr(), out.len()) };
    assert_eq!(st, FgaStatus::InvalidArgument);
    let st = unsafe { fga_model_gradcam(m.0, px.as_ptr(), px.len(), 0, ptr::null(), out.as_mut_ptr(), 10) };
    assert_eq!(st, FgaStatus::BufferTooSmall);

    unsafe { fga_model_free(ptr::null_mut()) };
}

#[test]
fn errors_are_per_thread() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { fga_model_load(ptr::null(), &mut h) }, FgaStatus::NullPointer);
    let other = std::thread::spawn(|| fga_last_error().is_null()).join().unwrap();
    assert!(other);
    assert!(last_error().contains("path is null"));
}

/// The generated header must compile as C and declare every export.
#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/fganet.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "fga_last_error", "fga_version", "fga_model_load", "fga_model_free", "fga_model_num_classes",
        "fga_model_input_shape", "fga_model_class_name", "fga_model_predict", "fga_model_predict_file",
        "fga_model_gradcam", "FGA_STATUS_BUFFER_TOO_SMALL",
    ] {
        assert!(text.contains(f), "header lacks {f}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"fganet.h\"\n\
         int probe(const char *p) {\n\
           FgaModel *m = 0; size_t n = 0;\n\
           if (fga_model_load(p, &m) != FGA_STATUS_OK) return 1;\n\
           fga_model_num_classes(m, &n);\n\
           fga_model_free(m);\n\
           return (int)n;\n\
         }\n",
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = match std::process::Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
    {
        Ok(s) => s,
        Err(e) => {
            eprintln!("skipping C compile: {cc}: {e}");
            return;
        }
    };
    assert!(status.success());
}
