//! `RVF1` volume files: magic, u32 c, d, h, w, u8 dtype (1 = f32), row-major
//! f32 payload, u32 label, u16 id length and UTF-8 id. All little-endian.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::data::Volume;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RVF1";
pub const DTYPE_F32: u8 = 1;
const HEADER_LEN: usize = 4 + 4 * 4 + 1;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic at offset {offset}")]
    BadMagic { offset: usize },
    #[error("truncated volume file: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated {
        offset: usize,
        needed: usize,
        len: usize,
    },
    #[error("dimension overflow at offset {offset}: {dims:?} does not fit in memory")]
    DimensionOverflow { offset: usize, dims: [u32; 4] },
    #[error("unsupported dtype code {code} at offset {offset}")]
    UnsupportedDtype { offset: usize, code: u8 },
    #[error("invalid volume at offset {offset}: {msg}")]
    Invalid { offset: usize, msg: String },
}

pub fn encode_volume(v: &Volume) -> Result<Vec<u8>, VolumeError> {
    let shape = v.data.shape();
    if shape.len() != 4 || shape.iter().any(|&d| d > u32::MAX as usize) {
        return Err(VolumeError::Invalid {
            offset: 4,
            msg: format!("volume shape {shape:?} is not a u32 [c, d, h, w]"),
        });
    }
    let id = v.id.as_bytes();
    if id.len() > u16::MAX as usize {
        return Err(VolumeError::Invalid {
            offset: 0,
            msg: format!("id of {} bytes exceeds u16 length", id.len()),
        });
    }
    let label = u32::try_from(v.label).map_err(|_| VolumeError::Invalid {
        offset: 0,
        msg: format!("label {} exceeds u32", v.label),
    })?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * v.data.numel() + 6 + id.len());
    out.extend_from_slice(MAGIC);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.push(DTYPE_F32);
    for x in v.data.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&label.to_le_bytes());
    out.extend_from_slice(&(id.len() as u16).to_le_bytes());
    out.extend_from_slice(id);
    Ok(out)
}

fn need(bytes: &[u8], offset: usize, n: usize) -> Result<&[u8], VolumeError> {
    match offset.checked_add(n) {
        Some(end) if end <= bytes.len() => Ok(&bytes[offset..end]),
        _ => Err(VolumeError::Truncated {
            offset,
            needed: n,
            len: bytes.len(),
        }),
    }
}

fn u32_at(bytes: &[u8], offset: usize) -> Result<u32, VolumeError> {
    Ok(u32::from_le_bytes(
        need(bytes, offset, 4)?.try_into().unwrap(),
    ))
}

/// Parses an RVF image. Signal metadata is not part of the format and comes
/// back empty.
pub fn decode_volume(bytes: &[u8]) -> Result<Volume, VolumeError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(VolumeError::BadMagic { offset: 0 });
    }
    let mut dims = [0u32; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = u32_at(bytes, 4 + 4 * i)?;
    }
    let code = need(bytes, 20, 1)?[0];
    if code != DTYPE_F32 {
        return Err(VolumeError::UnsupportedDtype { offset: 20, code });
    }
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .and_then(|n| n.checked_mul(4).map(|bytes| (n, bytes)))
        .filter(|&(_, b)| b <= isize::MAX as usize);
    let Some((numel, payload_bytes)) = payload else {
        return Err(VolumeError::DimensionOverflow { offset: 4, dims });
    };
    let data: Vec<f32> = need(bytes, HEADER_LEN, payload_bytes)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    debug_assert_eq!(data.len(), numel);
    let mut at = HEADER_LEN + payload_bytes;
    let label = u32_at(bytes, at)? as usize;
    at += 4;
    let id_len = u16::from_le_bytes(need(bytes, at, 2)?.try_into().unwrap()) as usize;
    at += 2;
    let id = std::str::from_utf8(need(bytes, at, id_len)?)
        .map_err(|e| VolumeError::Invalid {
            offset: at,
            msg: format!("id is not UTF-8: {e}"),
        })?
        .to_string();
    at += id_len;
    if at != bytes.len() {
        return Err(VolumeError::Invalid {
            offset: at,
            msg: format!("{} trailing bytes", bytes.len() - at),
        });
    }
    let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
    Ok(Volume {
        id,
        data: Tensor::new(shape, data).expect("payload length matches dims"),
        label,
        signal_slices: None,
    })
}

pub fn write_volume(path: impl AsRef<Path>, v: &Volume) -> Result<(), VolumeError> {
    fs::write(path, encode_volume(v)?)?;
    Ok(())
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume, VolumeError> {
    decode_volume(&fs::read(path)?)
}
