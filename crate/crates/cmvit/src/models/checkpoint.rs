//! Binary checkpoint format.
//!
//! Layout: magic `CMVK`, format version (u32 LE), a length-prefixed canonical
//! config serialization (with the scalar precision on its first line), then
//! one record per named tensor until end of file:
//! name length (u32 LE) + name bytes + rank (u32 LE) + extents (u64 LE each)
//! + raw little-endian values. Round-trips are bit-exact.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{numel_of, Real};

use super::{Model, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CMVK";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32_le(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64_le(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn write_record<T: Real>(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[T]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &e in shape {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in values {
        v.write_le(out);
    }
}

pub fn save_checkpoint<T: Real>(model: &Model<T>, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let blob = format!(
        "precision={}\n{}",
        T::BYTE_WIDTH * 8,
        model.config.canonical_string()
    );
    out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
    out.extend_from_slice(blob.as_bytes());
    for p in model.store.params() {
        write_record(&mut out, &p.name, &p.shape, &p.value);
    }
    for b in model.store.buffers() {
        write_record(&mut out, &b.name, &b.shape, &b.value);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Model<T>> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, not a CMVK checkpoint".into()));
    }
    let version = r.u32_le()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let blob_len = r.u32_le()? as usize;
    let blob = std::str::from_utf8(r.take(blob_len)?)
        .map_err(|_| Error::Checkpoint("config blob is not utf-8".into()))?;
    let (precision_line, config_text) = blob
        .split_once('\n')
        .ok_or_else(|| Error::Checkpoint("config blob missing precision line".into()))?;
    let expected = format!("precision={}", T::BYTE_WIDTH * 8);
    if precision_line != expected {
        return Err(Error::Checkpoint(format!(
            "{precision_line} does not match this build ({expected})"
        )));
    }
    let config = ModelConfig::from_canonical(config_text)?;
    let mut model = Model::<T>::new(config, 0)?;

    let mut records: HashMap<String, (Vec<usize>, Vec<T>)> = HashMap::new();
    while !r.done() {
        let name_len = r.u32_le()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("record name is not utf-8".into()))?
            .to_string();
        let rank = r.u32_le()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64_le()? as usize);
        }
        let numel = numel_of(&shape);
        let raw = r.take(numel * T::BYTE_WIDTH)?;
        let values: Vec<T> = raw.chunks_exact(T::BYTE_WIDTH).map(T::read_le).collect();
        if records.insert(name.clone(), (shape, values)).is_some() {
            return Err(Error::Checkpoint(format!("duplicate record {name}")));
        }
    }

    for p in model.store.params_mut() {
        let (shape, values) = records
            .remove(&p.name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", p.name)))?;
        if shape != p.shape {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {}: checkpoint {:?} vs architecture {:?}",
                p.name, shape, p.shape
            )));
        }
        p.value = values;
    }
    for b in model.store.buffers_mut() {
        let (shape, values) = records
            .remove(&b.name)
            .ok_or_else(|| Error::Checkpoint(format!("missing buffer {}", b.name)))?;
        if shape != b.shape {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {}: checkpoint {:?} vs architecture {:?}",
                b.name, shape, b.shape
            )));
        }
        b.value = values;
    }
    if let Some(name) = records.keys().next() {
        return Err(Error::Checkpoint(format!(
            "record {name} does not belong to the configured architecture"
        )));
    }
    Ok(model)
}
