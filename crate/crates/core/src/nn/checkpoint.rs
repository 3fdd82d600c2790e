//! Binary checkpoint container.
//!
//! ```text
//! "SLUCKPT1"
//! u32 entry count
//! per entry: u32 name length, name (UTF-8), u32 ndim, ndim × u64 dims, u32 precision bits
//! payloads in header order, little-endian, at each entry's precision
//! ```

use std::fs;
use std::path::Path;

use crate::ndnum::{Real, Tensor};

use super::NnError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SLUCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub tensor: Tensor<f64>,
    pub bits: u32,
}

/// Named tensors held at 64-bit with their on-disk precision.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.insert_bits(name, t.cast(), T::BITS);
    }

    pub fn insert_bits(&mut self, name: impl Into<String>, tensor: Tensor<f64>, bits: u32) {
        let name = name.into();
        self.entries.retain(|e| e.name != name);
        self.entries.push(Entry { name, tensor, bits });
    }

    /// Small integer-valued metadata, stored exactly at 64-bit.
    pub fn insert_meta(&mut self, name: impl Into<String>, values: &[f64]) {
        self.insert_bits(name, Tensor::vector(values.to_vec()), 64);
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn tensor<T: Real>(&self, name: &str) -> Result<Tensor<T>, NnError> {
        self.get(name)
            .map(|e| e.tensor.cast())
            .ok_or_else(|| NnError::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn meta(&self, name: &str, len: usize) -> Result<Vec<f64>, NnError> {
        let e = self
            .get(name)
            .ok_or_else(|| NnError::Checkpoint(format!("missing metadata `{name}`")))?;
        if e.tensor.len() != len {
            return Err(NnError::Checkpoint(format!(
                "metadata `{name}` has {} values, expected {len}",
                e.tensor.len()
            )));
        }
        Ok(e.tensor.data().to_vec())
    }

    pub fn precision_bits(&self, name: &str) -> Option<u32> {
        self.get(name).map(|e| e.bits)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.tensor.ndim() as u32).to_le_bytes());
            for &d in e.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&e.bits.to_le_bytes());
        }
        for e in &self.entries {
            for &v in e.tensor.data() {
                if e.bits == 32 {
                    (v as f32).write_le(&mut out);
                } else {
                    v.write_le(&mut out);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let count = r.u32()? as usize;
        let mut headers = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| NnError::Checkpoint("tensor name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let bits = r.u32()?;
            if bits != 32 && bits != 64 {
                return Err(NnError::Checkpoint(format!("`{name}`: unsupported precision {bits}")));
            }
            headers.push((name, shape, bits));
        }
        let mut entries = Vec::with_capacity(headers.len());
        for (name, shape, bits) in headers {
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(if bits == 32 {
                    f32::from_le_bytes(r.take(4)?.try_into().unwrap()) as f64
                } else {
                    f64::from_le_bytes(r.take(8)?.try_into().unwrap())
                });
            }
            let tensor = Tensor::from_vec(&shape, data)
                .map_err(|e| NnError::Checkpoint(format!("`{name}`: {e}")))?;
            entries.push(Entry { name, tensor, bits });
        }
        if r.pos != bytes.len() {
            return Err(NnError::Checkpoint("trailing bytes after payload".into()));
        }
        Ok(Checkpoint { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| NnError::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| NnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let bytes = fs::read(path).map_err(|e| NnError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.bytes.len() - self.pos < n {
            return Err(NnError::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
