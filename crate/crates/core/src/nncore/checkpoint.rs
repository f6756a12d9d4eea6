//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "TXTRCKPT"
//! version  u32
//! header   u32 length + UTF-8 JSON document
//! count    u32
//! entry*   u32 name length, name bytes, u8 dtype (0 = f32, 1 = f64),
//!          u32 rank, u64 per dimension, raw element payload
//! ```

use std::io::{Read, Write};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::{DType, Real};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TXTRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Values widened to f64; exact for both stored dtypes.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: serde_json::Value,
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn from_store<T: Real>(header: serde_json::Value, store: &ParamStore<T>) -> Self {
        let entries = store
            .entries()
            .iter()
            .map(|e| CheckpointEntry {
                name: e.name.clone(),
                dtype: T::DTYPE,
                shape: e.value.shape().to_vec(),
                values: e.value.to_f64_vec(),
            })
            .collect();
        Self { header, entries }
    }

    pub fn get(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Tensor for `name` converted to `T`.
    pub fn tensor<T: Real>(&self, name: &str) -> Option<Tensor<T>> {
        let e = self.get(name)?;
        Tensor::from_vec(&e.shape, e.values.iter().map(|&v| T::of(v)).collect()).ok()
    }

    /// Overwrites every parameter of `store` whose name starts with `prefix`
    /// from this checkpoint. Missing names or shape mismatches are errors.
    pub fn load_into<T: Real>(&self, store: &mut ParamStore<T>, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for entry in store.entries_mut().iter_mut().filter(|e| e.name.starts_with(prefix)) {
            let src = self
                .get(&entry.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", entry.name)))?;
            if src.shape != entry.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}`: checkpoint shape {:?}, model shape {:?}",
                    entry.name,
                    src.shape,
                    entry.value.shape()
                )));
            }
            for (dst, &v) in entry.value.data_mut().iter_mut().zip(&src.values) {
                *dst = T::of(v);
            }
            n += 1;
        }
        Ok(n)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&self.header)?;
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            buf.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            buf.extend_from_slice(e.name.as_bytes());
            buf.push(e.dtype.tag());
            buf.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &e.values {
                match e.dtype {
                    DType::F32 => (v as f32).write_le(&mut buf),
                    DType::F64 => v.write_le(&mut buf),
                }
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, at: 0 };
        if cur.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let header_len = cur.u32()? as usize;
        let header = serde_json::from_slice(cur.take(header_len)?)?;
        let count = cur.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let tag = cur.take(1)?[0];
            let dtype = DType::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown dtype tag {tag}")))?;
            let rank = cur.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = cur.take(n * dtype.size())?;
            let values = match dtype {
                DType::F32 => raw.chunks_exact(4).map(|c| f32::read_le(c) as f64).collect(),
                DType::F64 => raw.chunks_exact(8).map(f64::read_le).collect(),
            };
            entries.push(CheckpointEntry { name, dtype, shape, values });
        }
        if cur.at != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint entries".into()));
        }
        Ok(Self { header, entries })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
