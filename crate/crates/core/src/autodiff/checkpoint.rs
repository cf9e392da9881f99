//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `BARL`, format version `u32`, tensor count
//! `u32`, then per tensor: name length `u16`, UTF-8 name, rank `u8`, each
//! dimension as `u32`, and the row-major `f64` payload.

use std::fs;
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::binio::ByteReader;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BARL";
pub const VERSION: u32 = 1;

pub fn encode(store: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + store.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::invalid(format!("parameter name too long: {name}")))?;
        let rank = u8::try_from(t.rank())
            .map_err(|_| Error::invalid(format!("rank of '{name}' exceeds 255")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d)
                .map_err(|_| Error::invalid(format!("dimension of '{name}' exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::UnsupportedFormat(format!(
            "expected checkpoint magic BARL, found {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedFormat(format!(
            "checkpoint version {version} (supported: {VERSION})"
        )));
    }
    let count = r.u32("tensor count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let at = r.offset();
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Parse {
                offset: at,
                msg: "tensor name is not valid UTF-8".into(),
            })?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        if n.checked_mul(8).is_none_or(|b| b > r.remaining()) {
            return Err(r.error(format!("truncated payload for '{name}' ({n} values)")));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f64("payload")?);
        }
        if store.contains(&name) {
            return Err(r.error(format!("duplicate tensor name '{name}'")));
        }
        store.insert(name, Tensor::new(shape, data)?);
    }
    if r.remaining() != 0 {
        return Err(r.error("trailing bytes after last tensor"));
    }
    Ok(store)
}

pub fn save(path: impl AsRef<Path>, store: &ParamStore) -> Result<()> {
    fs::write(path, encode(store)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore> {
    decode(&fs::read(path)?)
}
