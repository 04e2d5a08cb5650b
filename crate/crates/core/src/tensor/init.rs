use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Shape, Tensor};
use crate::error::Result;

/// Which fan rule bounds a uniform draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FanKind {
    /// `±sqrt(6 / (fan_in + fan_out))`, for layers followed by a sigmoid.
    Glorot,
    /// `±sqrt(6 / fan_in)`, for layers followed by a ReLU.
    He,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Zeros,
    Constant(f64),
    UniformFan { kind: FanKind, seed: u64 },
}

/// Fan-in/fan-out of a weight shape: `k×k×Cin×Cout` kernels or `out×in`
/// dense matrices.
fn fans(shape: &Shape) -> (usize, usize) {
    match *shape.dims() {
        [kh, kw, cin, cout] => (kh * kw * cin, kh * kw * cout),
        [out, inp] => (inp, out),
        [n] => (n, n),
        [a, b, c] => (b * c, a * c),
        _ => unreachable!("Shape enforces rank 1..=4"),
    }
}

pub fn tensor_init(dims: &[usize], scheme: Init) -> Result<Tensor> {
    let shape = Shape::new(dims)?;
    let n = shape.numel();
    let data = match scheme {
        Init::Zeros => vec![0.0; n],
        Init::Constant(v) => vec![v; n],
        Init::UniformFan { kind, seed } => {
            let (fan_in, fan_out) = fans(&shape);
            let bound = match kind {
                FanKind::Glorot => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                FanKind::He => (6.0 / fan_in as f64).sqrt(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        }
    };
    Ok(Tensor::from_parts(shape, data))
}
