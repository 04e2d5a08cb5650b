//! Sinusoidal-grating texture task: each class is a grating at its own
//! spatial frequency, with random orientation and phase plus pixel noise.
//! Classes differ only in spectrum, not in mean intensity.

use std::f64::consts::PI;
use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::{to_u8, write_png};
use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GratingSpec {
    pub size: usize,
    /// Cycles per image width, one entry per class.
    pub frequencies: Vec<f64>,
    /// Peak deviation from mid-grey.
    pub contrast: f64,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise: f64,
}

impl Default for GratingSpec {
    fn default() -> Self {
        GratingSpec { size: 32, frequencies: vec![2.0, 4.0, 6.0, 8.0], contrast: 0.35, noise: 0.15 }
    }
}

impl GratingSpec {
    pub fn classes(&self) -> usize {
        self.frequencies.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.frequencies.iter().enumerate().map(|(i, f)| format!("c{i}_f{f}")).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.size < 2 || self.frequencies.len() < 2 {
            return Err(Error::Config("gratings need size >= 2 and at least 2 classes".into()));
        }
        if !(self.noise >= 0.0) || !(self.contrast > 0.0) {
            return Err(Error::Config("grating noise must be >= 0 and contrast > 0".into()));
        }
        Ok(())
    }

    /// One `size×size` grey image in `[0, 1]`, row-major.
    fn render(&self, class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let s = self.size;
        let theta = rng.gen_range(0.0..PI);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let k = 2.0 * PI * self.frequencies[class] / s as f64;
        let (kx, ky) = (k * theta.cos(), k * theta.sin());
        let noise = Normal::new(0.0, self.noise).expect("noise validated");
        let mut out = Vec::with_capacity(s * s);
        for y in 0..s {
            for x in 0..s {
                let v = 0.5 + self.contrast * (kx * x as f64 + ky * y as f64 + phase).sin();
                out.push((v + noise.sample(rng)).clamp(0.0, 1.0));
            }
        }
        out
    }

    /// `per_class` images of every class, interleaved (`0,1,…,C-1,0,1,…`),
    /// as three identical channels quantised to 8 bits like a decoded file.
    pub fn generate(&self, per_class: usize, seed: u64) -> Result<LabeledDataset> {
        self.validate()?;
        if per_class == 0 {
            return Err(Error::Config("per_class must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = self.size;
        let c = self.classes();
        let mut data = Vec::with_capacity(per_class * c * s * s * 3);
        let mut labels = Vec::with_capacity(per_class * c);
        for _ in 0..per_class {
            for class in 0..c {
                for v in self.render(class, &mut rng) {
                    let q = to_u8(v * 255.0) as f64 / 255.0;
                    data.extend_from_slice(&[q, q, q]);
                }
                labels.push(class);
            }
        }
        let images = Tensor::from_vec(&[labels.len(), s, s, 3], data)?;
        LabeledDataset::new(images, labels, self.class_names())
    }

    /// Writes `per_class` PNGs into one folder per class under `root`.
    pub fn write_tree(&self, root: &Path, per_class: usize, seed: u64) -> Result<()> {
        let ds = self.generate(per_class, seed)?;
        for name in ds.class_names() {
            std::fs::create_dir_all(root.join(name))?;
        }
        let s = self.size;
        for i in 0..ds.len() {
            let label = ds.labels()[i];
            let px = &ds.images().data()[i * s * s * 3..(i + 1) * s * s * 3];
            let bytes = px.iter().map(|&v| to_u8(v * 255.0)).collect();
            let img = RgbImage::from_raw(s as u32, s as u32, bytes).expect("sized above");
            let path = root.join(&ds.class_names()[label]).join(format!("img{i:04}.png"));
            write_png(&path, &img)?;
        }
        Ok(())
    }
}
