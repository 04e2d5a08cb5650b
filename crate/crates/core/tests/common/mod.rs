#![allow(dead_code)]

pub mod criteria;
pub mod gradsuite;

use fganet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(dims, data).unwrap()
}

pub fn normal(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    use rand_distr::{Distribution, StandardNormal};
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_vec(dims, data).unwrap()
}

pub fn onehot(labels: &[usize], classes: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * classes + l] = 1.0;
    }
    Tensor::from_vec(&[labels.len(), classes], data).unwrap()
}
