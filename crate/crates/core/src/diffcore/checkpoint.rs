//! Binary parameter checkpoints.
//!
//! Layout: `EIKGCRL1`, a version byte, then per entry the name length
//! (u32 LE), the UTF-8 name, the rank (u32 LE), each dim (u32 LE) and the
//! values as f64 LE. Entries run to end of file.

use std::fs;
use std::path::Path;

use super::params::ParameterSet;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EIKGCRL1";
pub const VERSION: u8 = 1;

pub fn encode(params: &ParameterSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + params.num_values() * 8);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for e in params.entries() {
        let name = e.name().as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(e.shape().len() as u32).to_le_bytes());
        for &d in e.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in e.values() {
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
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParameterSet> {
    if bytes.len() < MAGIC.len() + 1 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    if bytes[MAGIC.len()] != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {}", bytes[MAGIC.len()])));
    }
    let mut r = Reader {
        buf: bytes,
        pos: MAGIC.len() + 1,
    };
    let mut params = ParameterSet::new();
    while r.pos < bytes.len() {
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("dims")?);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("entry `{name}` is too large")))?;
        let raw = r.take(count.checked_mul(8).unwrap_or(usize::MAX), "values")?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params
            .insert(name, shape, values)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    Ok(params)
}

pub fn save(params: &ParameterSet, path: &Path) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParameterSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
