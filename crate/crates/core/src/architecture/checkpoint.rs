//! `SPM1` checkpoints: magic, u16 version, u32-length-prefixed JSON spec,
//! then every stored tensor (buffers included) as u32 name length, name,
//! u32 rank, u32 dims and little-endian f32 data, until end of file.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::architecture::{Model, ModelSpec};
use crate::tensor::{Element, Tensor, TensorError};

pub const MAGIC: &[u8; 4] = b"SPM1";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic at offset {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported checkpoint version {version} at offset {offset}")]
    UnsupportedVersion { version: u16, offset: usize },
    #[error("truncated checkpoint: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("invalid model spec at offset {offset}: {msg}")]
    Spec { offset: usize, msg: String },
    #[error("tensor mismatch at offset {offset}: {msg}")]
    TensorMismatch { offset: usize, msg: String },
    #[error(transparent)]
    Model(#[from] TensorError),
}

pub fn encode<T: Element>(model: &Model<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let spec = serde_json::to_vec(&model.spec).expect("model spec serializes");
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec);
    for (_, p) in model.store.iter() {
        let name = p.name().as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        let shape = p.value().shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value().data() {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n,
            });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode<T: Element>(bytes: &[u8]) -> Result<Model<T>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)
        .map_err(|_| CheckpointError::BadMagic { offset: 0 })?
        != MAGIC
    {
        return Err(CheckpointError::BadMagic { offset: 0 });
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion { version, offset: 4 });
    }
    let spec_len = r.u32()? as usize;
    let spec_at = r.pos;
    let spec: ModelSpec =
        serde_json::from_slice(r.take(spec_len)?).map_err(|e| CheckpointError::Spec {
            offset: spec_at,
            msg: e.to_string(),
        })?;
    let mut model = Model::<T>::new(spec, 0).map_err(|e| CheckpointError::Spec {
        offset: spec_at,
        msg: e.to_string(),
    })?;
    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let at = r.pos;
        if r.done() {
            let msg = format!("missing tensor {}", model.store.get(id).name());
            return Err(CheckpointError::TensorMismatch { offset: at, msg });
        }
        let name_len = r.u32()? as usize;
        let name = String::from_utf8_lossy(r.take(name_len)?).into_owned();
        let expected = model.store.get(id).name();
        if name != expected {
            let msg = format!("found tensor {name:?}, expected {expected:?}");
            return Err(CheckpointError::TensorMismatch { offset: at, msg });
        }
        let rank = r.u32()? as usize;
        let dims_at = r.pos;
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        if dims != model.store.value(id).shape() {
            let msg = format!(
                "{name} has shape {dims:?}, expected {:?}",
                model.store.value(id).shape()
            );
            return Err(CheckpointError::TensorMismatch {
                offset: dims_at,
                msg,
            });
        }
        let numel: usize = dims.iter().product();
        let raw = r.take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        model.store.set(id, Tensor::new(dims, data)?);
    }
    if !r.done() {
        let msg = "trailing data after last tensor".to_string();
        return Err(CheckpointError::TensorMismatch { offset: r.pos, msg });
    }
    Ok(model)
}

pub fn save_checkpoint<T: Element>(
    model: &Model<T>,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    fs::write(path, encode(model))?;
    Ok(())
}

pub fn load_checkpoint<T: Element>(path: impl AsRef<Path>) -> Result<Model<T>, CheckpointError> {
    decode(&fs::read(path)?)
}
