//! Timing and parameter counts of the attention blocks.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{cbam_param_count, fga_param_count, AttentionConfig, CbamBlock, FgaBlock};
use crate::error::{Error, Result};
use crate::model::AttentionKind;
use crate::tensor::{ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub block: AttentionKind,
    pub params: usize,
    pub forward_median_ms: Option<f64>,
    pub forward_iqr_ms: Option<f64>,
    pub backward_median_ms: Option<f64>,
    pub backward_iqr_ms: Option<f64>,
    pub error: Option<String>,
}

pub fn write_csv<W: std::io::Write>(rows: &[BenchRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// `(median, interquartile range)` using linear interpolation between
/// order statistics.
pub fn median_iqr(samples: &[f64]) -> (f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    };
    (q(0.5), q(0.75) - q(0.25))
}

enum Block {
    None,
    Fga(FgaBlock),
    Cbam(CbamBlock),
}

impl Block {
    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        match self {
            Block::None => Ok(x),
            Block::Fga(b) => Ok(b.forward(tape, store, x)?.out),
            Block::Cbam(b) => Ok(b.forward(tape, store, x)?.out),
        }
    }
}

fn bench_cell(
    shape: (usize, usize, usize),
    batch: usize,
    kind: AttentionKind,
    cfg: &AttentionConfig,
    repeats: usize,
    seed: u64,
) -> Result<BenchRow> {
    let (h, w, c) = shape;
    let mut store = ParamStore::new();
    let (block, params) = match kind {
        AttentionKind::None => (Block::None, 0),
        AttentionKind::Fga => {
            let b = FgaBlock::new("bench", *cfg)?;
            b.register(&mut store, seed)?;
            (Block::Fga(b), fga_param_count(cfg))
        }
        AttentionKind::Cbam => {
            let b = CbamBlock::new("bench", *cfg)?;
            b.register(&mut store, seed)?;
            (Block::Cbam(b), cbam_param_count(cfg))
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::from_vec(
        &[batch, h, w, c],
        (0..batch * h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;

    let mut fwd = Vec::with_capacity(repeats);
    let mut bwd = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        std::hint::black_box(block.forward(&mut tape, &store, x)?);
        fwd.push(t0.elapsed().as_secs_f64() * 1e3);

        let t0 = Instant::now();
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let y = block.forward(&mut tape, &store, x)?;
        let loss = tape.sum(y)?;
        std::hint::black_box(tape.backward(loss)?);
        bwd.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let (fm, fi) = median_iqr(&fwd);
    let (bm, bi) = median_iqr(&bwd);
    Ok(BenchRow {
        height: h,
        width: w,
        channels: c,
        block: kind,
        params,
        forward_median_ms: Some(fm),
        forward_iqr_ms: Some(fi),
        backward_median_ms: Some(bm),
        backward_iqr_ms: Some(bi),
        error: None,
    })
}

/// Times forward and forward+backward of each block on every `(H, W, C)`
/// shape. `base` supplies everything but the channel count. Failing cells
/// are recorded in their row rather than aborting the run.
pub fn bench_attention(
    shapes: &[(usize, usize, usize)],
    batch: usize,
    repeats: usize,
    base: &AttentionConfig,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if repeats < 3 {
        return Err(Error::Config(format!("repeats must be >= 3, got {repeats}")));
    }
    let mut rows = Vec::new();
    for &shape in shapes {
        let cfg = AttentionConfig { channels: shape.2, ..*base };
        for kind in [AttentionKind::None, AttentionKind::Cbam, AttentionKind::Fga] {
            let row = bench_cell(shape, batch, kind, &cfg, repeats, seed).unwrap_or_else(|e| BenchRow {
                height: shape.0,
                width: shape.1,
                channels: shape.2,
                block: kind,
                params: 0,
                forward_median_ms: None,
                forward_iqr_ms: None,
                backward_median_ms: None,
                backward_iqr_ms: None,
                error: Some(e.to_string()),
            });
            rows.push(row);
        }
    }
    Ok(rows)
}
