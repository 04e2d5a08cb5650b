use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn indices_by_class(labels: &[usize]) -> Vec<Vec<usize>> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    by_class
}

/// Validation share of a class of `n` samples: `round(n·f)`, at least one,
/// and never the whole class.
pub fn val_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// Stratified train/validation split. Both halves are returned sorted by
/// sample index; the seed decides which samples of each class go where.
pub fn stratified_split(labels: &[usize], val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction {val_fraction} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (class, mut idx) in indices_by_class(labels).into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::Dataset(format!("class {class} has {} sample(s); need at least 2", idx.len())));
        }
        idx.shuffle(&mut rng);
        let nv = val_count(idx.len(), val_fraction);
        val.extend_from_slice(&idx[..nv]);
        train.extend_from_slice(&idx[nv..]);
    }
    if train.is_empty() {
        return Err(Error::Dataset("cannot split an empty label set".into()));
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Fold id per sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    k: usize,
    assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }

    /// `(train, held-out)` sample indices for fold `f`, ascending.
    pub fn split(&self, f: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if f >= self.k {
            return Err(Error::InvalidArgument(format!("fold {f} of {}", self.k)));
        }
        let (held, train): (Vec<usize>, Vec<usize>) =
            (0..self.assignment.len()).partition(|&i| self.assignment[i] == f);
        Ok((train, held))
    }
}

/// Stratified k-fold assignment: each class is shuffled and dealt
/// round-robin, continuing from where the previous class stopped so that
/// total fold sizes also stay within one of each other.
pub fn kfold_partition(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k must be >= 2, got {k}")));
    }
    if labels.is_empty() {
        return Err(Error::Dataset("cannot partition an empty label set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for (class, mut idx) in indices_by_class(labels).into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < k {
            return Err(Error::Dataset(format!("class {class} has {} samples, fewer than k = {k}", idx.len())));
        }
        idx.shuffle(&mut rng);
        for i in idx {
            assignment[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldPlan { k, assignment })
}
