//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FGAW"  u32 version  u32 blob_len  blob (UTF-8 JSON: spec + class names)
//! u32 tensor_count
//! per tensor: u32 name_len  name  u32 rank  u32 dims[rank]  f64 data[Π dims]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"FGAW";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    class_names: Vec<String>,
}

/// A model together with the class table it was trained on.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub class_names: Vec<String>,
}

impl Checkpoint {
    pub fn new(model: Model, class_names: Vec<String>) -> Result<Self> {
        if class_names.len() != model.spec().classes {
            return Err(Error::Config(format!(
                "{} class names for a {}-class model",
                class_names.len(),
                model.spec().classes
            )));
        }
        Ok(Checkpoint { model, class_names })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header { spec: self.model.spec().clone(), class_names: self.class_names.clone() };
        let blob = serde_json::to_vec(&header)?;
        let params = self.model.params();
        let mut out = Vec::with_capacity(64 + blob.len() + params.num_scalars() * 8);
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_len(&mut out, blob.len())?;
        out.extend_from_slice(&blob);
        put_len(&mut out, params.len())?;
        for (name, var) in params.iter() {
            put_len(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            let dims = var.value.dims();
            put_len(&mut out, dims.len())?;
            for &d in dims {
                put_len(&mut out, d)?;
            }
            for v in var.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint { offset: 0, reason: "bad magic (expected FGAW)".into() });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::CheckpointVersion { found: version, expected: VERSION });
        }
        let blob_len = r.u32("header length")? as usize;
        let blob_at = r.pos;
        let header: Header = serde_json::from_slice(r.take(blob_len, "header")?)
            .map_err(|e| Error::Checkpoint { offset: blob_at as u64, reason: format!("header JSON: {e}") })?;

        let count = r.u32("tensor count")?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let at = r.pos;
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| Error::Checkpoint { offset: at as u64 + 4, reason: "name is not UTF-8".into() })?
                .to_string();
            let rank = r.u32("rank")? as usize;
            if !(1..=crate::tensor::MAX_RANK).contains(&rank) {
                return Err(r.error(format!("tensor `{name}` has rank {rank}")));
            }
            let dims = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let n = n.filter(|&n| n > 0).ok_or_else(|| r.error(format!("tensor `{name}` has dims {dims:?}")))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| r.error("tensor too large".into()))?, "tensor data")?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            params
                .insert(name.clone(), Tensor::from_vec(&dims, data)?, true)
                .map_err(|_| Error::Checkpoint { offset: at as u64, reason: format!("duplicate tensor `{name}`") })?;
        }
        if r.pos != bytes.len() {
            return Err(r.error(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let model = Model::from_params(header.spec, params)?;
        Checkpoint::new(model, header.class_names)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_len(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint {
        offset: out.len() as u64,
        reason: format!("{v} does not fit in u32"),
    })?;
    put_u32(out, v);
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error(&self, reason: String) -> Error {
        Error::Checkpoint { offset: self.pos as u64, reason }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            self.error(format!(
                "truncated while reading {what}: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}
