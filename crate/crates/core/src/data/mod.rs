//! Labeled image collections: the in-memory container, directory loading,
//! and image codecs.

pub mod image;
mod load;
pub mod synthetic;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use load::{load_dataset, ClassMode, SkippedFile, NO_TUMOR_FOLDER};

/// Preprocessed images (`N×H×W×C`, values in `[0, 1]`) with integer labels.
/// One-hot targets are materialised per batch.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    images: Tensor,
    labels: Vec<usize>,
    class_names: Vec<String>,
    /// Source file per sample; synthetic sets use descriptive placeholders.
    sources: Vec<PathBuf>,
    skipped: Vec<SkippedFile>,
    provenance: Vec<ClassSource>,
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        let n = images.shape().nhwc()?.0;
        let sources = (0..n).map(|i| PathBuf::from(format!("#{i}"))).collect();
        Self::with_sources(images, labels, class_names, sources)
    }

    pub fn with_sources(
        images: Tensor,
        labels: Vec<usize>,
        class_names: Vec<String>,
        sources: Vec<PathBuf>,
    ) -> Result<Self> {
        let (n, ..) = images.shape().nhwc()?;
        if labels.len() != n || sources.len() != n {
            return Err(Error::Dataset(format!(
                "{n} images but {} labels and {} sources",
                labels.len(),
                sources.len()
            )));
        }
        if class_names.len() < 2 {
            return Err(Error::Dataset(format!("need at least 2 classes, got {}", class_names.len())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Dataset(format!("label {l} outside {} classes", class_names.len())));
        }
        Ok(LabeledDataset { images, labels, class_names, sources, skipped: Vec::new(), provenance: Vec::new() })
    }

    pub(crate) fn set_skipped(&mut self, skipped: Vec<SkippedFile>) {
        self.skipped = skipped;
    }

    pub(crate) fn set_provenance(&mut self, provenance: Vec<ClassSource>) {
        self.provenance = provenance;
    }

    /// Which folders fed each class, when loaded from disk.
    pub fn provenance(&self) -> &[ClassSource] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn sources(&self) -> &[PathBuf] {
        &self.sources
    }

    /// Files that failed to decode and were left out.
    pub fn skipped(&self) -> &[SkippedFile] {
        &self.skipped
    }

    /// `(height, width, channels)` of every image.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        let (_, h, w, c) = self.images.shape().nhwc().expect("validated at construction");
        (h, w, c)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Images and one-hot targets for the given sample indices, in order.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        let (h, w, c) = self.image_dims();
        let per = h * w * c;
        let mut images = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!("sample {i} of {}", self.len())));
            }
            images.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        let images = Tensor::from_vec(&[indices.len(), h, w, c], images)?;
        Ok((images, one_hot(&labels, self.num_classes())?))
    }

    /// A new dataset holding the given samples (class table unchanged).
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        if indices.is_empty() {
            return Err(Error::Dataset("empty subset".into()));
        }
        let (images, _) = self.batch(indices)?;
        Ok(LabeledDataset {
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            sources: indices.iter().map(|&i| self.sources[i].clone()).collect(),
            skipped: Vec::new(),
            provenance: self.provenance.clone(),
        })
    }
}

/// `N×C` one-hot rows.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("one-hot of zero labels".into()));
    }
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::InvalidArgument(format!("label {l} outside 0..{classes}")));
        }
        data[i * classes + l] = 1.0;
    }
    Tensor::from_vec(&[labels.len(), classes], data)
}

/// Per-class sample provenance kept in reports (e.g. which folders were
/// merged into a class).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSource {
    pub class: String,
    pub folders: Vec<String>,
    pub count: usize,
}
