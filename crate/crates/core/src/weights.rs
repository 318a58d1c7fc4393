//! Binary weight persistence.
//!
//! Layout, all integers little-endian: magic `SLCW`, u32 version (1), u32
//! tensor count, then per tensor: u16 name length, UTF-8 name, u8 rank,
//! u64 per dimension, f32 payload. Tensors are written in name order, so
//! identical weights always produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::ModelWeights;
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"SLCW";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn weights_to_bytes(weights: &ModelWeights) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    let count = u32::try_from(weights.tensors.len())
        .map_err(|_| Error::WeightsFormat("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in &weights.tensors {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::WeightsFormat(format!("tensor name {name:?} too long")))?;
        let rank = u8::try_from(t.shape().len())
            .map_err(|_| Error::WeightsFormat(format!("tensor {name:?} rank too large")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::WeightsFormat(format!(
                "truncated: needed {n} bytes for {what} at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn weights_from_bytes(bytes: &[u8]) -> Result<ModelWeights> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != WEIGHTS_MAGIC {
        return Err(Error::WeightsFormat(format!("bad magic {magic:02x?}, expected \"SLCW\"")));
    }
    let version = c.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::WeightsFormat(format!(
            "unsupported version {version}, this build reads version {WEIGHTS_VERSION}"
        )));
    }
    let count = c.u32("tensor count")?;
    let mut tensors = BTreeMap::new();
    for i in 0..count {
        let name_len = c.u16("name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| Error::WeightsFormat(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let rank = c.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut len = 1usize;
        for _ in 0..rank {
            let d = c.u64("dimension")?;
            let d = usize::try_from(d)
                .map_err(|_| Error::WeightsFormat(format!("tensor {name:?}: dimension {d} too large")))?;
            len = len
                .checked_mul(d)
                .ok_or_else(|| Error::WeightsFormat(format!("tensor {name:?}: size overflow")))?;
            shape.push(d);
        }
        let payload_len = len
            .checked_mul(4)
            .ok_or_else(|| Error::WeightsFormat(format!("tensor {name:?}: size overflow")))?;
        let payload = c.take(payload_len, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data)
            .map_err(|e| Error::WeightsFormat(format!("tensor {name:?}: {e}")))?;
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(Error::WeightsFormat(format!("duplicate tensor name {name:?}")));
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::WeightsFormat(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - c.pos
        )));
    }
    Ok(ModelWeights { tensors })
}

pub fn save_weights(weights: &ModelWeights, path: &Path) -> Result<()> {
    fs::write(path, weights_to_bytes(weights)?)?;
    Ok(())
}

/// Loads a weights file; any structural problem rejects the whole file
/// rather than returning partial tensors.
pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    let bytes = fs::read(path)?;
    weights_from_bytes(&bytes)
}
