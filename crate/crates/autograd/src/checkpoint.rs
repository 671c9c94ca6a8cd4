//! Binary checkpoint format.
//!
//! ```text
//! magic        7 bytes  "PTPCKPT"
//! version      u32 LE
//! meta_count   u32 LE, then per entry: u32 key_len, key, u32 val_len, val (UTF-8)
//! tensor_count u64 LE, then per tensor:
//!     u32 name_len, name (UTF-8)
//!     u32 ndim, ndim × u64 dims
//!     product(dims) × f64 LE
//! ```
//!
//! Values are written as raw IEEE-754 bits, so a round trip is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::array::NumArray;
use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 7] = b"PTPCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Parameters plus free-form string metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, NumArray)>,
}

impl Checkpoint {
    pub fn from_params(store: &ParamStore) -> Self {
        Self {
            meta: BTreeMap::new(),
            tensors: store.iter().map(|(n, v)| (n.to_string(), v.clone())).collect(),
        }
    }

    /// Rebuilds a store with fresh optimizer state.
    pub fn to_params(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (name, value) in &self.tensors {
            store
                .insert(name.clone(), value.clone())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok(store)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, arr) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(arr.shape().len() as u32).to_le_bytes());
            for &d in arr.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in arr.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            if meta.insert(k.clone(), v).is_some() {
                return Err(Error::Checkpoint(format!("duplicate metadata key `{k}`")));
            }
        }
        let count = r.u64()?;
        let mut tensors = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..count {
            let name = r.string()?;
            if !seen.insert(name.clone()) {
                return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
            }
            let ndim = r.u32()? as usize;
            // Every dim costs 8 bytes; reject before allocating.
            if ndim > r.remaining() / 8 {
                return Err(Error::Checkpoint("truncated shape".into()));
            }
            let mut shape = Vec::with_capacity(ndim);
            let mut n: usize = 1;
            for _ in 0..ndim {
                let d = usize::try_from(r.u64()?)
                    .map_err(|_| Error::Checkpoint("dimension overflows usize".into()))?;
                n = n
                    .checked_mul(d)
                    .ok_or_else(|| Error::Checkpoint("element count overflows".into()))?;
                shape.push(d);
            }
            if n > r.remaining() / 8 {
                return Err(Error::Checkpoint(format!("truncated values for `{name}`")));
            }
            let raw = r.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, NumArray::new(shape, data)?));
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { meta, tensors })
    }

    /// Hex SHA-256 of the encoded form.
    pub fn digest(&self) -> String {
        hex_digest(&self.encode())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint(format!(
                "unexpected end of data at byte {} (wanted {n})",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}
