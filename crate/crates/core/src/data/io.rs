//! Binary dataset file.
//!
//! Little-endian layout: magic `BADS`, `u32` version, `f32` sample rate,
//! `u32` epoch length, `u16` class count, `u32` epoch count, then per epoch a
//! `u32` subject id, an `i16` label (`-1` = hidden) and the `f32` samples.
//! Samples are stored in single precision, so values that are not exactly
//! representable as `f32` are rounded on save.

use std::path::Path;

use super::Dataset;
use crate::augment::Epoch;
use crate::binio::ByteReader;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BADS";
pub const VERSION: u32 = 1;

pub fn encode(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let n_classes = u16::try_from(ds.n_classes)
        .ok()
        .filter(|&c| c as usize <= i16::MAX as usize)
        .ok_or_else(|| Error::invalid(format!("{} classes do not fit the file format", ds.n_classes)))?;
    let epoch_len = u32::try_from(ds.epoch_len).map_err(|_| Error::invalid("epoch length too large"))?;
    let n_epochs = u32::try_from(ds.len()).map_err(|_| Error::invalid("too many epochs"))?;

    let mut out = Vec::with_capacity(22 + ds.len() * (6 + 4 * ds.epoch_len));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.sample_rate as f32).to_le_bytes());
    out.extend_from_slice(&epoch_len.to_le_bytes());
    out.extend_from_slice(&n_classes.to_le_bytes());
    out.extend_from_slice(&n_epochs.to_le_bytes());
    for e in &ds.epochs {
        out.extend_from_slice(&e.subject_id.to_le_bytes());
        let label = e.label.map_or(-1, |l| l as i16);
        out.extend_from_slice(&label.to_le_bytes());
        for &v in &e.samples {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::UnsupportedFormat(format!(
            "not a dataset file (magic {:?}, expected \"BADS\")",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedFormat(format!("dataset version {version}, expected {VERSION}")));
    }
    let sample_rate = r.f32("sample rate")? as f64;
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(r.error(format!("invalid sample rate {sample_rate}")));
    }
    let epoch_len = r.u32("epoch length")? as usize;
    let n_classes = r.u16("class count")? as usize;
    let n_epochs = r.u32("epoch count")? as usize;
    if epoch_len == 0 || n_classes == 0 {
        return Err(r.error("epoch length and class count must be positive"));
    }
    let record = 6 + 4 * epoch_len;
    if r.remaining() / record < n_epochs {
        return Err(r.error(format!(
            "truncated: header declares {n_epochs} epochs of {record} bytes, {} bytes left",
            r.remaining()
        )));
    }

    let mut epochs = Vec::with_capacity(n_epochs);
    for i in 0..n_epochs {
        let subject = r.u32("subject id")?;
        let at = r.offset();
        let label = match r.i16("label")? {
            -1 => None,
            l if l >= 0 && (l as usize) < n_classes => Some(l as usize),
            l => {
                return Err(Error::Parse {
                    offset: at,
                    msg: format!("epoch {i}: label {l} outside [-1, {n_classes})"),
                })
            }
        };
        let raw = r.take(4 * epoch_len, "samples")?;
        let samples = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect();
        epochs.push(Epoch::new(samples, label, subject));
    }
    if r.remaining() != 0 {
        return Err(r.error(format!("{} trailing bytes after last epoch", r.remaining())));
    }
    Dataset::new(epochs, n_classes, sample_rate, epoch_len)
}

pub fn save(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    std::fs::write(path, encode(ds)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    decode(&std::fs::read(path)?)
}
