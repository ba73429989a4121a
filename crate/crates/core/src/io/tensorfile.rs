//! `UDAT` binary arrays.
//!
//! Layout (integers little-endian `u32`): magic `"UDAT"`, version, dtype
//! tag, rank, dims, then the row-major little-endian payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UDAT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F64,
    I32,
    U8,
}

impl DType {
    fn tag(self) -> u32 {
        match self {
            DType::F64 => 1,
            DType::I32 => 2,
            DType::U8 => 3,
        }
    }

    fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            1 => Some(DType::F64),
            2 => Some(DType::I32),
            3 => Some(DType::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::I32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    I32(Vec<i32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F64(_) => DType::F64,
            TensorData::I32(_) => DType::I32,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::I32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl TensorFile {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::shape("tensor_file", format!("dims {dims:?} vs {} values", data.len())));
        }
        Ok(TensorFile { dims, data })
    }

    pub fn f64(dims: Vec<usize>, v: Vec<f64>) -> Result<Self> {
        Self::new(dims, TensorData::F64(v))
    }

    pub fn u8(dims: Vec<usize>, v: Vec<u8>) -> Result<Self> {
        Self::new(dims, TensorData::U8(v))
    }

    pub fn i32(dims: Vec<usize>, v: Vec<i32>) -> Result<Self> {
        Self::new(dims, TensorData::I32(v))
    }

    pub fn encode(&self) -> Vec<u8> {
        let dt = self.data.dtype();
        let mut out = Vec::with_capacity(16 + 4 * self.dims.len() + self.data.len() * dt.size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&dt.tag().to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |d: &str| Error::format(path, d);
        let word = |i: usize| -> Result<u32> {
            bytes
                .get(i..i + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| bad("truncated header"))
        };
        if bytes.get(..4) != Some(MAGIC.as_slice()) {
            return Err(bad("bad magic"));
        }
        if word(4)? != VERSION {
            return Err(bad("unsupported version"));
        }
        let dt = DType::from_tag(word(8)?).ok_or_else(|| bad("unknown dtype tag"))?;
        let rank = word(12)? as usize;
        let dims = (0..rank).map(|i| word(16 + 4 * i).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let start = 16 + 4 * rank;
        let n: usize = dims.iter().product();
        let payload = &bytes[start.min(bytes.len())..];
        if payload.len() != n * dt.size() {
            return Err(bad(&format!("payload has {} bytes, expected {}", payload.len(), n * dt.size())));
        }
        let data = match dt {
            DType::F64 => TensorData::F64(
                payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            DType::I32 => TensorData::I32(
                payload.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            DType::U8 => TensorData::U8(payload.to_vec()),
        };
        Ok(TensorFile { dims, data })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    pub fn into_f64(self, path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
        match self.data {
            TensorData::F64(v) => Ok((self.dims, v)),
            other => Err(Error::format(path, format!("expected f64 payload, got {:?}", other.dtype()))),
        }
    }

    pub fn into_u8(self, path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
        match self.data {
            TensorData::U8(v) => Ok((self.dims, v)),
            other => Err(Error::format(path, format!("expected u8 payload, got {:?}", other.dtype()))),
        }
    }
}
