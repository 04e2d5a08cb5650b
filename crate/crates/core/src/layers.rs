//! Parameter declarations and the thin layer helpers the blocks share.

use crate::error::Result;
use crate::tensor::{tensor_init, ConvSpec, FanKind, Init, ParamStore, Tape, Var};

/// How a declared parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamInit {
    /// Followed by a ReLU.
    He,
    /// Followed by a sigmoid or softmax.
    Glorot,
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub init: ParamInit,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, dims: &[usize], init: ParamInit) -> Self {
        ParamSpec { name: name.into(), dims: dims.to_vec(), init }
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

/// FNV-1a, so a parameter's initial draw depends on its name, not on the
/// order parameters are declared in.
fn name_hash(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn register(store: &mut ParamStore, specs: &[ParamSpec], seed: u64) -> Result<()> {
    for spec in specs {
        let scheme = match spec.init {
            ParamInit::Zeros => Init::Zeros,
            ParamInit::He => Init::UniformFan { kind: FanKind::He, seed: seed ^ name_hash(&spec.name) },
            ParamInit::Glorot => Init::UniformFan { kind: FanKind::Glorot, seed: seed ^ name_hash(&spec.name) },
        };
        log::trace!("init {} {:?} with {:?}", spec.name, spec.dims, spec.init);
        store.insert(spec.name.clone(), tensor_init(&spec.dims, scheme)?, true)?;
    }
    Ok(())
}

pub(crate) fn conv_specs(prefix: &str, k: usize, cin: usize, cout: usize, bias: bool, init: ParamInit) -> Vec<ParamSpec> {
    let mut v = vec![ParamSpec::new(format!("{prefix}.w"), &[k, k, cin, cout], init)];
    if bias {
        v.push(ParamSpec::new(format!("{prefix}.b"), &[cout], ParamInit::Zeros));
    }
    v
}

pub(crate) fn dense_specs(prefix: &str, cin: usize, cout: usize, bias: bool, init: ParamInit) -> Vec<ParamSpec> {
    let mut v = vec![ParamSpec::new(format!("{prefix}.w"), &[cout, cin], init)];
    if bias {
        v.push(ParamSpec::new(format!("{prefix}.b"), &[cout], ParamInit::Zeros));
    }
    v
}

fn bias(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Option<Var>> {
    let name = format!("{prefix}.b");
    if store.contains(&name) {
        Ok(Some(tape.param(store, &name)?))
    } else {
        Ok(None)
    }
}

/// Convolution with the weights stored under `prefix.w` / `prefix.b`.
pub(crate) fn conv(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var, spec: ConvSpec) -> Result<Var> {
    let w = tape.param(store, &format!("{prefix}.w"))?;
    let b = bias(tape, store, prefix)?;
    tape.conv2d(x, w, b, spec)
}

pub(crate) fn dense(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = tape.param(store, &format!("{prefix}.w"))?;
    let b = bias(tape, store, prefix)?;
    tape.dense(x, w, b)
}
