//! Binary feature interchange (`HPFV1`).
//!
//! Layout, all integers `u32` little-endian and all values `f32`
//! little-endian:
//!
//! ```text
//! magic  "HPFV1" (5 bytes)
//! version (= 1) | d | n_items | n_dense
//! per item:
//!   [rows: u32]        only when n_dense == 0 (variable row count)
//!   global: d floats
//!   dense:  rows × d floats, row-major
//! ```

use std::path::Path;

use super::EncodedText;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"HPFV1";
pub const VERSION: u32 = 1;

/// Global feature plus dense per-region (or per-token) features of one item.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemFeatures {
    pub global: Vec<f32>,
    pub dense: Vec<f32>,
    pub n_dense: usize,
}

impl ItemFeatures {
    pub fn d(&self) -> usize {
        self.global.len()
    }

    pub fn dense_row(&self, j: usize) -> &[f32] {
        let d = self.d();
        &self.dense[j * d..(j + 1) * d]
    }

    /// Text stand-in for an image: EOS feature and per-token rows.
    pub fn from_encoded(enc: &EncodedText) -> Self {
        Self {
            global: enc.global.iter().map(|&v| v as f32).collect(),
            dense: enc.tokens.iter().map(|&v| v as f32).collect(),
            n_dense: enc.n_r,
        }
    }
}

pub fn write_features(path: impl AsRef<Path>, d: usize, items: &[ItemFeatures]) -> Result<()> {
    let path = path.as_ref();
    let uniform = items.first().map(|i| i.n_dense).filter(|&n| items.iter().all(|i| i.n_dense == n));
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    for v in [VERSION, d as u32, items.len() as u32, uniform.unwrap_or(0) as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for item in items {
        if item.global.len() != d || item.dense.len() != item.n_dense * d || item.n_dense == 0 {
            return Err(Error::InvalidArgument("feature item shape does not match d".into()));
        }
        if uniform.is_none() {
            buf.extend_from_slice(&(item.n_dense as u32).to_le_bytes());
        }
        for v in item.global.iter().chain(&item.dense) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
    context: String,
}

impl Reader<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::format(&self.context, format!("byte {}", self.offset), message)
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.offset < n {
            return Err(self.err(format!("truncated: needed {n} more bytes")));
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let start = self.offset;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.err("size overflow"))?)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!("{} at byte {}", self.context, start + 4 * i)));
        }
        Ok(values)
    }
}

/// Returns `(d, items)` in file order.
pub fn import_features(path: impl AsRef<Path>) -> Result<(usize, Vec<ItemFeatures>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        offset: 0,
        context: path.display().to_string(),
    };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::format(&r.context, "byte 0", "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let d = r.u32()? as usize;
    let n_items = r.u32()? as usize;
    let n_dense = r.u32()? as usize;
    if d == 0 {
        return Err(r.err("d must be positive"));
    }
    let mut items = Vec::with_capacity(n_items.min(1 << 16));
    for _ in 0..n_items {
        let rows = if n_dense == 0 { r.u32()? as usize } else { n_dense };
        if rows == 0 {
            return Err(r.err("item has no dense rows"));
        }
        let global = r.floats(d)?;
        let dense = r.floats(rows * d)?;
        items.push(ItemFeatures {
            global,
            dense,
            n_dense: rows,
        });
    }
    if r.offset != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.offset)));
    }
    Ok((d, items))
}
