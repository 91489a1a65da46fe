//! Versioned little-endian tensor container.
//!
//! Layout:
//!
//! ```text
//! magic        4 bytes  "GZGD"
//! version      u32
//! entry count  u32
//! per entry:
//!   name length u32, name (UTF-8)
//!   dtype       u8     0 = f32, 1 = f64
//!   rank        u32, then one u64 per dimension
//!   payload     product(dims) little-endian values
//! ```

use std::fs;
use std::path::Path;

use crate::engine::Tensor;

use super::DataError;

pub const MAGIC: &[u8; 4] = b"GZGD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Entry {
    pub fn f64(name: impl Into<String>, tensor: &Tensor) -> Self {
        Self {
            name: name.into(),
            shape: tensor.shape().to_vec(),
            data: TensorData::F64(tensor.data().to_vec()),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        };
        Tensor::new(&self.shape, data).expect("entries are validated on construction and load")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| DataError::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn push(&mut self, entry: Entry) {
        self.entries.push(entry);
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor, DataError> {
        self.get(name)
            .map(Entry::to_tensor)
            .ok_or_else(|| DataError::Checkpoint(format!("missing entry `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(match e.data {
                TensorData::F32(_) => 0,
                TensorData::F64(_) => 1,
            });
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &e.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DataError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(DataError::Checkpoint("bad magic (not a GZGD checkpoint)".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(DataError::Checkpoint(format!(
                "unsupported version {version} (this build reads {VERSION})"
            )));
        }
        let count = cur.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| DataError::Checkpoint("entry name is not UTF-8".into()))?;
            let dtype = cur.take(1)?[0];
            let rank = cur.u32()? as usize;
            let shape = (0..rank)
                .map(|_| cur.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| DataError::Checkpoint(format!("entry `{name}` has an overflowing shape")))?;
            let data = match dtype {
                0 => TensorData::F32(
                    cur.take(
                        numel
                            .checked_mul(4)
                            .ok_or_else(|| DataError::Checkpoint("overflow".into()))?,
                    )?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
                ),
                1 => TensorData::F64(
                    cur.take(
                        numel
                            .checked_mul(8)
                            .ok_or_else(|| DataError::Checkpoint("overflow".into()))?,
                    )?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                ),
                other => {
                    return Err(DataError::Checkpoint(format!(
                        "entry `{name}` has unknown dtype {other}"
                    )))
                }
            };
            debug_assert_eq!(data.len(), numel);
            entries.push(Entry { name, shape, data });
        }
        if cur.pos != bytes.len() {
            return Err(DataError::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - cur.pos
            )));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_bytes()).map_err(|e| DataError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
