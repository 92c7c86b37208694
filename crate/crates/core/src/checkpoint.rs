//! Binary checkpoint format.
//!
//! ```text
//! "C2FN" | version u32 | count u32 | count x entry
//! entry = name_len u16 | name | ndim u8 | ndim x dim u32 | f32 x prod(dims)
//! ```
//!
//! All integers and reals are little-endian. Entries are written in name order.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::nn::{Param, ParamStore};

pub const MAGIC: &[u8; 4] = b"C2FN";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: magic bytes {0:?} do not match \"C2FN\"")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0} (this build reads version {VERSION})")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checkpoint entry name is not valid UTF-8")]
    BadName,
    #[error("{0} trailing bytes after the last entry")]
    TrailingBytes(usize),
    #[error("parameter `{0}` has a non-finite value")]
    NonFinite(String),
    #[error("parameter `{0}` does not fit the format limits")]
    TooLarge(String),
    #[error("shape manifest mismatch at `{name}`: expected {expected:?}, found {found:?}")]
    ShapeManifest { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint is missing parameter `{0}`")]
    Missing(String),
    #[error("checkpoint has unexpected parameter `{0}`")]
    Unexpected(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub fn encode(store: &ParamStore<f32>) -> Result<Vec<u8>, CheckpointError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, p) in store.iter() {
        if p.data.iter().any(|v| !v.is_finite()) {
            return Err(CheckpointError::NonFinite(name.clone()));
        }
        let name_len = u16::try_from(name.len()).map_err(|_| CheckpointError::TooLarge(name.clone()))?;
        let ndim = u8::try_from(p.dims.len()).map_err(|_| CheckpointError::TooLarge(name.clone()))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(ndim);
        for &d in &p.dims {
            let d = u32::try_from(d).map_err(|_| CheckpointError::TooLarge(name.clone()))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(CheckpointError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Trainability is not stored; every decoded entry is marked trainable until
/// it is matched against an architecture.
pub fn decode(bytes: &[u8]) -> Result<ParamStore<f32>, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = match bytes.get(..4) {
        Some(m) => m.try_into().unwrap(),
        None => return Err(CheckpointError::Truncated("magic")),
    };
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    r.pos = 4;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = r.u32("entry count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?).map_err(|_| CheckpointError::BadName)?.to_string();
        let ndim = r.take(1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32("dims")? as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = r.take(numel.checked_mul(4).ok_or(CheckpointError::Truncated("values"))?, "values")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        store.insert(name, Param { dims, data, trainable: true });
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(store)
}

pub fn save(store: &ParamStore<f32>, path: &Path) -> Result<(), CheckpointError> {
    let bytes = encode(store)?;
    fs::write(path, bytes).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
}

pub fn load(path: &Path) -> Result<ParamStore<f32>, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("a.weight", Param { dims: vec![2, 1, 1, 1], data: vec![1.5, -0.25], trainable: true });
        s.insert("a.bias", Param { dims: vec![2], data: vec![0.0, f32::MIN_POSITIVE], trainable: true });
        s
    }

    #[test]
    fn layout_is_bit_exact() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"C2FN");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        // name-ordered: "a.bias" first
        assert_eq!(&bytes[12..14], &6u16.to_le_bytes());
        assert_eq!(&bytes[14..20], b"a.bias");
        assert_eq!(bytes[20], 1);
        assert_eq!(&bytes[21..25], &2u32.to_le_bytes());
        assert_eq!(&bytes[25..29], &0f32.to_le_bytes());
    }

    #[test]
    fn round_trip_is_identity() {
        let s = sample();
        let bytes = encode(&s).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn distinct_parse_errors() {
        let bytes = encode(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(CheckpointError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode(&bad), Err(CheckpointError::UnsupportedVersion(9))));
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(CheckpointError::Truncated(_))));
        assert!(matches!(decode(&bytes[..2]), Err(CheckpointError::Truncated("magic"))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(CheckpointError::TrailingBytes(1))));
    }

    #[test]
    fn non_finite_rejected_on_save() {
        let mut s = sample();
        s.get_mut("a.weight").unwrap().data[0] = f32::NAN;
        assert!(matches!(encode(&s), Err(CheckpointError::NonFinite(_))));
    }
}
