//! Parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"EQNN" | version u32 | group count u32 |
//!   per group: name length u32 | UTF-8 name | rows u32 | cols u32 | rows*cols f32
//! ```
//!
//! Values are stored as `f32`. Only values are stored; optimizer moments
//! are not.

use std::path::Path;

use super::matrix::Matrix;
use super::param::ParamSet;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EQNN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + params.num_values() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for g in params.iter() {
        out.extend_from_slice(&(g.name.len() as u32).to_le_bytes());
        out.extend_from_slice(g.name.as_bytes());
        out.extend_from_slice(&(g.value.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(g.value.cols() as u32).to_le_bytes());
        for v in g.value.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamSet> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::Format("not an EQNN checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("group name is not UTF-8".into()))?
            .to_string();
        if params.find(&name).is_some() {
            return Err(Error::Format(format!("group {name:?} appears twice")));
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("group size overflows".into()))?;
        let raw = r.take(n)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        params.add(name, Matrix::from_vec(rows, cols, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after last group".into()));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
