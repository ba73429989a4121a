//! Single-file parameter snapshots.
//!
//! Layout, all integers little-endian `u32`:
//! `"UDAW"`, version, then per parameter until end of file:
//! name length, UTF-8 name, rank, dims, `f64` little-endian values.

use std::fs;
use std::path::Path;

use super::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"UDAW";
pub const VERSION: u32 = 1;

pub fn encode<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    out
}

/// Parses a checkpoint into `(name, tensor)` records in file order.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor<f64>)>> {
    let bad = |d: &str| Error::format(path, d);
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4).ok_or_else(|| bad("truncated header"))? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = cur.u32().ok_or_else(|| bad("truncated header"))?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let mut records = Vec::new();
    while cur.pos < bytes.len() {
        let len = cur.u32().ok_or_else(|| bad("truncated name length"))? as usize;
        let name = std::str::from_utf8(cur.take(len).ok_or_else(|| bad("truncated name"))?)
            .map_err(|_| bad("name is not UTF-8"))?
            .to_string();
        let rank = cur.u32().ok_or_else(|| bad("truncated rank"))? as usize;
        let dims = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated dims"))?;
        let n: usize = dims.iter().product();
        let raw = cur.take(n * 8).ok_or_else(|| bad("truncated values"))?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(dims, data).map_err(|e| bad(&e.to_string()))?;
        records.push((name, t));
    }
    Ok(records)
}

pub fn save<T: Scalar>(store: &ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(store)).map_err(|e| Error::io(path, e))
}

/// Overwrites `store` with the checkpoint's values. Names and shapes must
/// match the store exactly, in order.
pub fn load_into<T: Scalar>(store: &mut ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let records = decode(&bytes, path)?;
    if records.len() != store.len() {
        return Err(Error::format(
            path,
            format!("{} parameters in file, network has {}", records.len(), store.len()),
        ));
    }
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for (id, (name, t)) in ids.into_iter().zip(records) {
        let p = store.get(id);
        if p.name != name || p.value.shape() != t.shape() {
            return Err(Error::format(
                path,
                format!("record {name} {:?} does not match {} {:?}", t.shape(), p.name, p.value.shape()),
            ));
        }
        let converted: Vec<T> = t.data().iter().map(|&v| T::lit(v)).collect();
        store.value_mut(id).data_mut().copy_from_slice(&converted);
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}
