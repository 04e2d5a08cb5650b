use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image::{has_supported_extension, load_image};
use super::{ClassSource, LabeledDataset};
use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::Tensor;

/// Folder name (compared case-insensitively, ignoring `_`, `-` and spaces)
/// holding the images without a tumor.
pub const NO_TUMOR_FOLDER: &str = "notumor";
const TUMOR_CLASS: &str = "tumor";

/// How class folders map to labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMode {
    /// Every folder is its own class.
    #[default]
    Folders,
    /// Four folders, one class each.
    Four,
    /// The no-tumor folder is dropped; three tumor classes remain.
    Three,
    /// Tumor folders merge into one `tumor` class against `notumor`.
    Two,
}

impl ClassMode {
    pub fn from_count(n: usize) -> Result<Self> {
        match n {
            4 => Ok(ClassMode::Four),
            3 => Ok(ClassMode::Three),
            2 => Ok(ClassMode::Two),
            other => Err(Error::Config(format!("class mode must be 4, 3 or 2, got {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

fn is_no_tumor(folder: &str) -> bool {
    let norm: String = folder
        .chars()
        .filter(|c| !matches!(c, '_' | '-' | ' '))
        .flat_map(char::to_lowercase)
        .collect();
    norm == NO_TUMOR_FOLDER
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", dir.display())))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn folder_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// `(class names, folders per class)` after applying `mode`.
fn plan_classes(folders: &[String], mode: ClassMode) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let no_tumor: Vec<&String> = folders.iter().filter(|f| is_no_tumor(f)).collect();
    let need_no_tumor = || -> Result<&String> {
        match no_tumor.as_slice() {
            [one] => Ok(one),
            [] => Err(Error::Dataset(format!("no `{NO_TUMOR_FOLDER}` folder among {folders:?}"))),
            _ => Err(Error::Dataset(format!("several no-tumor folders among {folders:?}"))),
        }
    };
    let singletons = |names: Vec<&String>| -> (Vec<String>, Vec<Vec<String>>) {
        let groups = names.iter().map(|n| vec![(*n).clone()]).collect();
        (names.into_iter().cloned().collect(), groups)
    };
    let plan = match mode {
        ClassMode::Folders => singletons(folders.iter().collect()),
        ClassMode::Four => {
            if folders.len() != 4 {
                return Err(Error::Dataset(format!("4-class mode needs 4 folders, found {folders:?}")));
            }
            singletons(folders.iter().collect())
        }
        ClassMode::Three => {
            let nt = need_no_tumor()?;
            let rest: Vec<&String> = folders.iter().filter(|f| *f != nt).collect();
            if rest.len() != 3 {
                return Err(Error::Dataset(format!("3-class mode needs 3 tumor folders, found {rest:?}")));
            }
            singletons(rest)
        }
        ClassMode::Two => {
            let nt = need_no_tumor()?;
            let rest: Vec<String> = folders.iter().filter(|f| *f != nt).cloned().collect();
            if rest.is_empty() {
                return Err(Error::Dataset("2-class mode needs at least one tumor folder".into()));
            }
            let mut plan = vec![(nt.clone(), vec![nt.clone()]), (TUMOR_CLASS.to_string(), rest)];
            plan.sort();
            plan.into_iter().unzip()
        }
    };
    if plan.0.len() < 2 {
        return Err(Error::Dataset(format!("need at least 2 classes, found {:?}", plan.0)));
    }
    Ok(plan)
}

/// Loads a directory-per-class tree. Folders and files are visited in
/// sorted order; files that fail to decode are skipped and recorded.
pub fn load_dataset(root: &Path, size: [usize; 2], mode: ClassMode) -> Result<LabeledDataset> {
    let folders: Vec<String> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .map(|p| folder_name(&p))
        .filter(|n| !n.starts_with('.'))
        .collect();
    if folders.is_empty() {
        return Err(Error::Dataset(format!("no class folders under {}", root.display())));
    }
    let (class_names, groups) = plan_classes(&folders, mode)?;

    let mut files: Vec<(PathBuf, usize)> = Vec::new();
    let mut provenance = Vec::new();
    for (label, group) in groups.iter().enumerate() {
        let mut count = 0;
        for folder in group {
            for p in sorted_entries(&root.join(folder))? {
                if p.is_file() && has_supported_extension(&p) {
                    files.push((p, label));
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(Error::Dataset(format!(
                "class `{}` has no image files (folders {group:?})",
                class_names[label]
            )));
        }
        provenance.push(ClassSource { class: class_names[label].clone(), folders: group.clone(), count });
    }

    let [h, w] = size;
    let decoded: Vec<Result<Tensor>> = parallel::pool()?
        .install(|| files.par_iter().map(|(p, _)| load_image(p, h, w)).collect());

    let mut data = Vec::with_capacity(files.len() * h * w * 3);
    let (mut labels, mut sources, mut skipped) = (Vec::new(), Vec::new(), Vec::new());
    for ((path, label), img) in files.into_iter().zip(decoded) {
        match img {
            Ok(t) => {
                data.extend_from_slice(t.data());
                labels.push(label);
                sources.push(path);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped.push(SkippedFile { path, reason: e.to_string() });
            }
        }
    }
    for (label, name) in class_names.iter().enumerate() {
        if !labels.contains(&label) {
            return Err(Error::Dataset(format!("class `{name}` has no decodable images")));
        }
    }
    let images = Tensor::from_vec(&[labels.len(), h, w, 3], data)?;
    let mut ds = LabeledDataset::with_sources(images, labels, class_names, sources)?;
    ds.set_skipped(skipped);
    ds.set_provenance(provenance);
    Ok(ds)
}
