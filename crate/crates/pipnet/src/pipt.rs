//! `.pipt` binary tensors: `PIPT`, u16 version, u8 dtype (0 f32, 1 f64),
//! u8 rank, rank × u64 extents, then the little-endian row-major payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use pipnet_core::{Real, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PIPT";
pub const VERSION: u16 = 1;

/// A decoded tensor of either element type.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dims(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.dims(),
            AnyTensor::F64(t) => t.dims(),
        }
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        match self {
            AnyTensor::F32(t) => t.clone(),
            AnyTensor::F64(t) => t.cast(),
        }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.clone(),
        }
    }

    /// Exact when the stored type is `T`; otherwise a numeric cast.
    pub fn into_real<T: Real>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let width = if T::DTYPE == 0 { 4 } else { 8 };
    let mut out = Vec::with_capacity(8 + 8 * t.ndim() + width * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE);
    out.push(t.ndim() as u8);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        if T::DTYPE == 0 {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        } else {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

/// Decodes one tensor from the front of `bytes`, returning it and the
/// number of bytes consumed.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<(AnyTensor, usize)> {
    let bad = |reason: &str| Error::format(origin, reason);
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("missing PIPT magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let dtype = bytes[6];
    let rank = bytes[7] as usize;
    let mut pos = 8;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let chunk = bytes.get(pos..pos + 8).ok_or_else(|| bad("truncated extents"))?;
        let d = u64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        dims.push(usize::try_from(d).map_err(|_| bad("extent overflow"))?);
        pos += 8;
    }
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| bad("extent overflow"))?;
    let width = match dtype {
        0 => 4,
        1 => 8,
        d => return Err(bad(&format!("unknown dtype {d}"))),
    };
    let len = n.checked_mul(width).ok_or_else(|| bad("extent overflow"))?;
    let payload = bytes.get(pos..pos + len).ok_or_else(|| bad("truncated payload"))?;
    let t = if dtype == 0 {
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        AnyTensor::F32(Tensor::new(&dims, data)?)
    } else {
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        AnyTensor::F64(Tensor::new(&dims, data)?)
    };
    Ok((t, pos + len))
}

pub fn write<T: Real>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<AnyTensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let (t, used) = decode(&bytes, path)?;
    if used != bytes.len() {
        return Err(Error::format(path, "trailing bytes"));
    }
    Ok(t)
}
