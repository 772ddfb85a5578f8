//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes   "SPNATTN\0"
//! version  u32
//! meta     u64 length + JSON {config, thresholds}
//! count    u32
//! shapes   per tensor: u32 name length, name bytes, u32 rank, u64 per dim
//! payload  f64 values of every tensor in table order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExtractionThresholds, Model, ModelConfig};

pub const MAGIC: &[u8; 8] = b"SPNATTN\0";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    thresholds: ExtractionThresholds,
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let meta = serde_json::to_vec(&Meta {
        config: model.cfg.clone(),
        thresholds: model.thresholds,
    })
    .expect("configs always serialize");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(model.store.len() as u32).to_le_bytes());
    for p in model.store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for p in model.store.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::Checkpoint(format!("{what} too large")))
    }
}

/// Rebuilds a model from checkpoint bytes. Nothing is returned unless the
/// whole file parses and every tensor matches the architecture in its config.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
    }
    let meta_len = r.len("metadata length")?;
    let meta: Meta = serde_json::from_slice(r.take(meta_len, "metadata")?)?;
    let count = r.u32("tensor count")? as usize;
    let mut table = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(n, "name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let shape = (0..rank).map(|_| r.len("dimension")).collect::<Result<Vec<_>>>()?;
        table.push((name, shape));
    }
    let mut values = Vec::with_capacity(table.len());
    for (name, shape) in &table {
        let n: usize = shape.iter().product();
        let raw = r.take(n.saturating_mul(8), name)?;
        values.push(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect::<Vec<f64>>());
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    meta.thresholds.validate()?;

    let mut model = Model::new(meta.config)?;
    if model.store.len() != table.len() {
        return Err(Error::Checkpoint(format!(
            "file has {} tensors, architecture expects {}",
            table.len(),
            model.store.len()
        )));
    }
    for (p, (name, shape)) in model.store.iter().zip(&table) {
        if &p.name != name || p.value.shape() != &shape[..] {
            return Err(Error::Checkpoint(format!(
                "tensor {name} {shape:?} does not match {} {:?}",
                p.name,
                p.value.shape()
            )));
        }
    }
    for (p, v) in model.store.iter_mut().zip(values) {
        p.value.data_mut().copy_from_slice(&v);
    }
    model.thresholds = meta.thresholds;
    Ok(model)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    from_bytes(&std::fs::read(path)?)
}
