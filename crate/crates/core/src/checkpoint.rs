//! Binary model archives.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"ATNBCKPT"  u32 version  u32 spec_len  spec_len bytes of ModelSpec JSON
//! u32 count, then per tensor:
//!   u32 name_len  name (UTF-8)  u8 trainable  u32 rank  rank × u64 dims
//!   product(dims) × f64 values
//! ```
//!
//! Values are always stored as `f64`, so an `f32` model round-trips exactly
//! and can be reloaded at either precision.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use crate::backbone::{build_resnet18, ModelSpec, ResNet};
use crate::error::{Error, Result};
use crate::param::Module;
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ATNBCKPT";
pub const VERSION: u32 = 1;

pub fn to_bytes<T: Real, M: Module<T>>(model: &M, spec: &ModelSpec) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let spec = serde_json::to_vec(spec)?;
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec);
    let params = model.named_params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, p) in params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(p.is_trainable() as u8);
        let shape = p.value().shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value().data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save<T: Real, M: Module<T>>(model: &M, spec: &ModelSpec, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model, spec)?)?;
    Ok(())
}

/// One stored tensor.
#[derive(Clone, Debug)]
pub struct Entry {
    pub name: String,
    pub trainable: bool,
    pub value: Tensor<f64>,
}

#[derive(Clone, Debug)]
pub struct Archive {
    pub spec: ModelSpec,
    pub entries: Vec<Entry>,
}

fn take<const N: usize>(r: &mut Cursor<&[u8]>) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("archive is truncated".into()))?;
    Ok(buf)
}

fn take_u32(r: &mut Cursor<&[u8]>) -> Result<usize> {
    Ok(u32::from_le_bytes(take(r)?) as usize)
}

fn take_vec(r: &mut Cursor<&[u8]>, len: usize) -> Result<Vec<u8>> {
    let remaining = r.get_ref().len() - r.position() as usize;
    if len > remaining {
        return Err(Error::Checkpoint("archive is truncated".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).expect("length checked");
    Ok(buf)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Archive> {
    let mut r = Cursor::new(bytes);
    if &take::<8>(&mut r)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let spec_len = take_u32(&mut r)?;
    let spec: ModelSpec = serde_json::from_slice(&take_vec(&mut r, spec_len)?)?;
    let count = take_u32(&mut r)?;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = take_u32(&mut r)?;
        let name = String::from_utf8(take_vec(&mut r, name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let trainable = take::<1>(&mut r)?[0] != 0;
        let rank = take_u32(&mut r)?;
        let dims = (0..rank)
            .map(|_| Ok(u64::from_le_bytes(take(&mut r)?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?;
        let raw = take_vec(&mut r, n.saturating_mul(8))?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let value = Tensor::new(&dims, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        entries.push(Entry { name, trainable, value });
    }
    if (r.position() as usize) != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(Archive { spec, entries })
}

/// Overwrites every parameter of `model` from `archive`. Names and shapes
/// must match exactly, with nothing missing or left over.
pub fn restore<T: Real, M: Module<T>>(model: &mut M, archive: &Archive) -> Result<()> {
    let expected: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let stored: Vec<&str> = archive.entries.iter().map(|e| e.name.as_str()).collect();
    if expected != stored {
        let missing: Vec<_> = expected.iter().filter(|n| !stored.contains(&n.as_str())).collect();
        let extra: Vec<_> = stored.iter().filter(|n| !expected.iter().any(|e| e == *n)).collect();
        return Err(Error::Checkpoint(format!(
            "parameter names differ; missing {missing:?}, unexpected {extra:?}"
        )));
    }
    let mut entries = archive.entries.iter();
    let mut failure = None;
    model.visit_mut("", &mut |name, p| {
        let e = entries.next().expect("same count");
        if failure.is_none() {
            if let Err(err) = p.set_value(e.value.cast()) {
                failure = Some(Error::Checkpoint(format!("{name}: {err}")));
            }
        }
    });
    failure.map_or(Ok(()), Err)
}

pub fn load_resnet<T: Real>(path: &Path) -> Result<ResNet<T>> {
    let archive = from_bytes(&fs::read(path)?)?;
    let mut model = build_resnet18(&archive.spec, 0)?;
    restore(&mut model, &archive)?;
    Ok(model)
}
