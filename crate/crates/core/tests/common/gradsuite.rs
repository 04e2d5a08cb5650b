//! Tape gradients against central differences, shared by the unit-style
//! gradient tests and the acceptance runner. Every case returns the worst
//! relative error over its seeds.

use super::{normal, onehot, rng, uniform};
use fganet::attention::{AttentionConfig, CbamBlock, FgaBlock};
use fganet::model::{ForwardMode, ModelSpec};
use fganet::tensor::{
    finite_diff_check, param_finite_diff_check, ActivationKind, BinaryKind, ConvSpec, Padding,
    PoolKind, ResizeKind,
};
use fganet::{Model, ParamStore, Result, Tape, Tensor, Var};

pub const STEP: f64 = 1e-6;
pub const OP_TOL: f64 = 1e-5;
pub const MODEL_TOL: f64 = 1e-4;
const CASES: u64 = 20;

pub struct GradCase {
    pub group: &'static str,
    pub name: String,
    pub tol: f64,
    pub check: Box<dyn Fn() -> f64>,
}

fn case(group: &'static str, name: impl Into<String>, tol: f64, check: impl Fn() -> f64 + 'static) -> GradCase {
    GradCase { group, name: name.into(), tol, check: Box::new(check) }
}

/// Contracts `y` against a fixed random weighting so every output element
/// contributes a distinct amount to the scalar.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let dims = tape.value(y).dims().to_vec();
    let w = tape.leaf(normal(&mut rng(seed ^ 0xABCD), &dims));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn fd(x: &Tensor, f: impl Fn(&mut Tape, Var) -> Result<Var>) -> f64 {
    finite_diff_check(f, x, STEP).unwrap()
}

fn unary_once(seed: u64, dims: &[usize], op: &impl Fn(&mut Tape, Var) -> Result<Var>) -> f64 {
    let x = normal(&mut rng(seed), dims);
    fd(&x, |t, v| {
        let y = op(t, v)?;
        project(t, y, seed)
    })
}

fn unary(group: &'static str, name: impl Into<String>, dims: &[usize], op: impl Fn(&mut Tape, Var) -> Result<Var> + 'static) -> GradCase {
    let dims = dims.to_vec();
    case(group, name, OP_TOL, move || (0..CASES).map(|s| unary_once(s, &dims, &op)).fold(0.0, f64::max))
}

fn binary_cases() -> Vec<GradCase> {
    [BinaryKind::Add, BinaryKind::Sub, BinaryKind::Mul]
        .into_iter()
        .map(|kind| {
            case("binary", format!("{kind:?} with broadcast"), OP_TOL, move || {
                let mut worst = 0.0f64;
                for seed in 0..CASES {
                    let other = normal(&mut rng(seed + 100), &[2, 3, 3, 1]);
                    let o2 = other.clone();
                    worst = worst.max(unary_once(seed, &[2, 3, 3, 4], &move |t: &mut Tape, v| {
                        let o = t.leaf(o2.clone());
                        t.binary(v, o, kind)
                    }));
                    // The broadcast operand must receive the summed gradient too.
                    let x = normal(&mut rng(seed + 200), &[2, 3, 3, 4]);
                    worst = worst.max(fd(&other, |t, o| {
                        let xv = t.leaf(x.clone());
                        let y = t.binary(xv, o, kind)?;
                        project(t, y, seed)
                    }));
                }
                worst
            })
        })
        .collect()
}

fn dense_case() -> GradCase {
    case("dense", "dense x/w/b", OP_TOL, || {
        let mut worst = 0.0f64;
        for seed in 0..CASES {
            let w = normal(&mut rng(seed + 1), &[5, 4]);
            let b = normal(&mut rng(seed + 2), &[5]);
            let x = normal(&mut rng(seed + 3), &[3, 4]);
            let run = |t: &mut Tape, x: Var, w: Var, b: Var| -> Result<Var> {
                let y = t.dense(x, w, Some(b))?;
                project(t, y, seed)
            };
            worst = worst.max(fd(&x, |t, v| {
                let (w, b) = (t.leaf(w.clone()), t.leaf(b.clone()));
                run(t, v, w, b)
            }));
            worst = worst.max(fd(&w, |t, v| {
                let (x, b) = (t.leaf(x.clone()), t.leaf(b.clone()));
                run(t, x, v, b)
            }));
            worst = worst.max(fd(&b, |t, v| {
                let (x, w) = (t.leaf(x.clone()), t.leaf(w.clone()));
                run(t, x, w, v)
            }));
            let x4 = normal(&mut rng(seed + 4), &[3, 1, 1, 4]);
            worst = worst.max(fd(&x4, |t, v| {
                let w = t.leaf(w.clone());
                let y = t.dense(v, w, None)?;
                project(t, y, seed)
            }));
        }
        worst
    })
}

fn conv_cases() -> Vec<GradCase> {
    let specs = [
        (3, 2, ConvSpec::default()),
        (1, 3, ConvSpec::default()),
        (5, 2, ConvSpec { padding: Padding::Valid, ..ConvSpec::default() }),
        (3, 2, ConvSpec { stride: 2, ..ConvSpec::default() }),
        (3, 1, ConvSpec { depthwise: true, ..ConvSpec::default() }),
    ];
    specs
        .into_iter()
        .map(|(k, cout, spec)| {
            case("conv", format!("conv2d k{k} {spec:?}"), OP_TOL, move || {
                let cin = 3;
                let wdims = if spec.depthwise { [k, k, 1, cin] } else { [k, k, cin, cout] };
                let bdims = if spec.depthwise { cin } else { cout };
                let mut worst = 0.0f64;
                for seed in 0..CASES {
                    let x = normal(&mut rng(seed), &[2, 6, 5, cin]);
                    let w = normal(&mut rng(seed + 50), &wdims);
                    let b = normal(&mut rng(seed + 60), &[bdims]);
                    let run = |t: &mut Tape, x: Var, w: Var, b: Var| -> Result<Var> {
                        let y = t.conv2d(x, w, Some(b), spec)?;
                        project(t, y, seed)
                    };
                    worst = worst.max(fd(&x, |t, v| {
                        let (w, b) = (t.leaf(w.clone()), t.leaf(b.clone()));
                        run(t, v, w, b)
                    }));
                    worst = worst.max(fd(&w, |t, v| {
                        let (x, b) = (t.leaf(x.clone()), t.leaf(b.clone()));
                        run(t, x, v, b)
                    }));
                    worst = worst.max(fd(&b, |t, v| {
                        let (x, w) = (t.leaf(x.clone()), t.leaf(w.clone()));
                        run(t, x, w, v)
                    }));
                }
                worst
            })
        })
        .collect()
}

fn cross_entropy_case() -> GradCase {
    case("loss", "softmax + cross-entropy", OP_TOL, || {
        let mut worst = 0.0f64;
        for seed in 0..CASES {
            let labels: Vec<usize> = (0..4).map(|i| (seed as usize + i * 3) % 5).collect();
            let target = onehot(&labels, 5);
            let x = normal(&mut rng(seed), &[4, 5]);
            worst = worst.max(fd(&x, |t, v| {
                let p = t.softmax(v)?;
                t.cross_entropy(p, &target)
            }));
        }
        worst
    })
}

/// Zero-initialised biases feeding an all-zero (dead) activation sit exactly
/// on a ReLU kink, where the derivative does not exist; move them off it.
pub fn jitter_biases(store: &mut ParamStore, seed: u64) {
    let mut r = rng(seed);
    for (name, var) in store.iter_mut() {
        if name.ends_with(".b") {
            let dims = var.value.dims().to_vec();
            var.value = uniform(&mut r, &dims, -0.1, 0.1);
        }
    }
}

fn small_attention_cfg(channels: usize) -> AttentionConfig {
    AttentionConfig { reduction: 4, gate_hidden: 6, ..AttentionConfig::new(channels) }
}

fn fga_cases() -> Vec<GradCase> {
    let setup = || {
        let block = FgaBlock::new("fga", small_attention_cfg(8)).unwrap();
        let mut store = ParamStore::new();
        block.register(&mut store, 3).unwrap();
        jitter_biases(&mut store, 3);
        (block, store)
    };
    vec![
        case("fga", "FGA block wrt input (2x8x8x8)", OP_TOL, move || {
            let (block, store) = setup();
            (0..3)
                .map(|seed| {
                    let x = uniform(&mut rng(seed), &[2, 8, 8, 8], -1.0, 1.0);
                    fd(&x, |t, v| {
                        let out = block.forward(t, &store, v)?.out;
                        project(t, out, seed)
                    })
                })
                .fold(0.0, f64::max)
        }),
        case("fga", "FGA block wrt every parameter", OP_TOL, move || {
            let (block, store) = setup();
            let x = uniform(&mut rng(11), &[2, 8, 8, 8], -1.0, 1.0);
            param_finite_diff_check(
                &store,
                &[],
                |t, s| {
                    let xv = t.leaf(x.clone());
                    let out = block.forward(t, s, xv)?.out;
                    project(t, out, 11)
                },
                STEP,
            )
            .unwrap()
        }),
    ]
}

fn cbam_case() -> GradCase {
    case("cbam", "CBAM block wrt input and parameters", OP_TOL, || {
        let block = CbamBlock::new("cbam", small_attention_cfg(8)).unwrap();
        let mut store = ParamStore::new();
        block.register(&mut store, 5).unwrap();
        jitter_biases(&mut store, 5);
        let x = uniform(&mut rng(2), &[2, 6, 6, 8], -1.0, 1.0);
        let ex = fd(&x, |t, v| {
            let out = block.forward(t, &store, v)?.out;
            project(t, out, 2)
        });
        let ep = param_finite_diff_check(
            &store,
            &[],
            |t, s| {
                let xv = t.leaf(x.clone());
                let out = block.forward(t, s, xv)?.out;
                project(t, out, 2)
            },
            STEP,
        )
        .unwrap();
        ex.max(ep)
    })
}

fn model_case() -> GradCase {
    case("model", "tiny model loss wrt every parameter", MODEL_TOL, || {
        let spec = ModelSpec { dropout: 0.0, ..ModelSpec::tiny(8, 3) };
        let mut model = Model::new(spec.clone(), 4).unwrap();
        jitter_biases(model.params_mut(), 21);
        let x = uniform(&mut rng(8), &[2, 8, 8, 3], 0.0, 1.0);
        let target = onehot(&[0, 2], 3);
        param_finite_diff_check(
            model.params(),
            &[],
            |t, s| {
                let m = Model::from_params(spec.clone(), s.clone())?;
                let xv = t.leaf(x.clone());
                let out = m.forward(t, xv, ForwardMode::INFERENCE)?;
                t.cross_entropy(out.probs, &target)
            },
            STEP,
        )
        .unwrap()
    })
}

pub fn all_cases() -> Vec<GradCase> {
    let mut v = binary_cases();
    v.push(unary("affine", "affine", &[3, 4], |t, v| t.affine(v, -1.5, 0.25)));
    v.push(unary("activation", "relu", &[2, 4, 4, 3], |t, v| t.relu(v)));
    v.push(unary("activation", "sigmoid", &[2, 4, 4, 3], |t, v| t.sigmoid(v)));
    v.push(unary("activation", "softmax", &[3, 5], |t, v| t.activation(v, ActivationKind::Softmax)));
    v.push(dense_case());
    v.extend(conv_cases());
    for kind in [PoolKind::MaxPool2x2, PoolKind::GlobalAvg, PoolKind::GlobalMax, PoolKind::ChannelAvg, PoolKind::ChannelMax] {
        v.push(unary("pool", format!("{kind:?}"), &[2, 4, 6, 3], move |t, v| t.pool(v, kind)));
    }
    for kind in [ResizeKind::Bilinear, ResizeKind::Bicubic] {
        v.push(unary("resize", format!("{kind:?} up"), &[1, 3, 4, 2], move |t, v| t.resize(v, 7, 5, kind)));
        v.push(unary("resize", format!("{kind:?} down"), &[1, 8, 6, 2], move |t, v| t.resize(v, 3, 4, kind)));
    }
    v.push(unary("misc", "dropout", &[4, 6], |t, v| t.dropout(v, 0.4, true, 9)));
    v.push(case("misc", "concat", OP_TOL, || {
        (0..CASES)
            .map(|seed| {
                let other = normal(&mut rng(seed + 7), &[2, 3, 3, 2]);
                unary_once(seed, &[2, 3, 3, 4], &move |t: &mut Tape, v| {
                    let o = t.leaf(other.clone());
                    t.concat_channels(&[o, v, o])
                })
            })
            .fold(0.0, f64::max)
    }));
    v.push(unary("misc", "reshape", &[2, 2, 2, 3], |t, v| t.reshape(v, &[2, 12])));
    v.push(unary("misc", "mean", &[2, 5], |t, v| {
        let m = t.mean(v)?;
        t.affine(m, 3.0, 0.0)
    }));
    for dims in [[1, 4, 4, 2], [2, 6, 5, 1], [1, 8, 8, 1]] {
        v.push(unary("fft", format!("fft magnitude {dims:?}"), &dims, |t, v| t.fft_magnitude(v)));
    }
    v.push(cross_entropy_case());
    v.extend(fga_cases());
    v.push(cbam_case());
    v.push(model_case());
    v
}

/// Runs every case in `group`, panicking with the offenders.
pub fn assert_group(group: &str) {
    let cases: Vec<_> = all_cases().into_iter().filter(|c| c.group == group).collect();
    assert!(!cases.is_empty(), "no gradient cases in group {group}");
    let failures: Vec<String> = cases
        .iter()
        .filter_map(|c| {
            let err = (c.check)();
            (!(err < c.tol)).then(|| format!("{}: {err:e} (tol {:e})", c.name, c.tol))
        })
        .collect();
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}
