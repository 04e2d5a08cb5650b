use super::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

fn evaluate<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let y = f(&mut tape, v)?;
    tape.value(y).item()
}

/// Compares the tape gradient of a scalar program against central
/// differences and returns
/// `max_i |analytic_i - numeric_i| / max(1, |numeric_i|)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::InvalidArgument(format!("step {step} must be positive")));
    }
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let y = f(&mut tape, v)?;
    let grads = tape.backward(y)?;
    let analytic = grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros_like(x));

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig - step;
        let down = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Finite-difference check of a scalar program with respect to every
/// scalar of the named parameters in `store` (all parameters when `names`
/// is empty). Same error measure as [`finite_diff_check`].
pub fn param_finite_diff_check<F>(store: &ParamStore, names: &[&str], f: F, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::InvalidArgument(format!("step {step} must be positive")));
    }
    let names: Vec<String> = if names.is_empty() {
        store.names().map(str::to_string).collect()
    } else {
        names.iter().map(|s| s.to_string()).collect()
    };
    let mut tape = Tape::new();
    let y = f(&mut tape, store)?;
    let grads = tape.backward(y)?;
    let mut analytic = std::collections::BTreeMap::new();
    for (name, var) in tape.bindings() {
        if let Some(g) = grads.get(*var) {
            analytic.insert(name.clone(), g.clone());
        }
    }

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let y = f(&mut t, s)?;
        t.value(y).item()
    };
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for name in &names {
        let n = store.value(name)?.numel();
        for i in 0..n {
            fn slot<'a>(p: &'a mut ParamStore, name: &str, i: usize) -> &'a mut f64 {
                &mut p.get_mut(name).expect("name checked above").value.data_mut()[i]
            }
            let orig = *slot(&mut probe, name, i);
            *slot(&mut probe, name, i) = orig + step;
            let up = eval(&probe)?;
            *slot(&mut probe, name, i) = orig - step;
            let down = eval(&probe)?;
            *slot(&mut probe, name, i) = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.get(name).map_or(0.0, |g| g.data()[i]);
            worst = worst.max((a - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}
