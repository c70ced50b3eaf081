//! The `.ctn` tensor container.
//!
//! Layout, all little-endian: magic `CRWK`, `u32` version (1), `u8` dtype
//! (0 = f32, 1 = f64, 2 = u8), `u8` rank, `rank × u64` dims, then the
//! row-major payload.

use std::io::{Read, Write};

use super::scalar::{DType, Scalar};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CRWK";
pub const VERSION: u32 = 1;

/// A decoded record in whatever type it was stored as.
#[derive(Debug, Clone)]
pub enum CtnTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U8 { shape: Vec<usize>, data: Vec<u8> },
}

impl CtnTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            CtnTensor::F32(t) => t.shape(),
            CtnTensor::F64(t) => t.shape(),
            CtnTensor::U8 { shape, .. } => shape,
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            CtnTensor::F32(_) => DType::F32,
            CtnTensor::F64(_) => DType::F64,
            CtnTensor::U8 { .. } => DType::U8,
        }
    }

    /// Converts to `Tensor<S>`; bytes map to `[0, 1]` via `/255`.
    pub fn into_tensor<S: Scalar>(self) -> Tensor<S> {
        match self {
            CtnTensor::F32(t) => t.cast(),
            CtnTensor::F64(t) => t.cast(),
            CtnTensor::U8 { shape, data } => {
                Tensor::raw(shape, data.iter().map(|&b| S::of(b as f64 / 255.0)).collect())
            }
        }
    }
}

fn header(dtype: DType, shape: &[usize]) -> Result<Vec<u8>> {
    let rank = u8::try_from(shape.len()).map_err(|_| Error::Format(format!("rank {} too large", shape.len())))?;
    let mut out = Vec::with_capacity(10 + 8 * shape.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype.code());
    out.push(rank);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    Ok(out)
}

pub fn encode<S: Scalar>(t: &Tensor<S>) -> Result<Vec<u8>> {
    let mut out = header(S::DTYPE, t.shape())?;
    out.reserve(t.numel() * S::DTYPE.size_of());
    for &v in t.data() {
        v.write_le(&mut out);
    }
    Ok(out)
}

pub fn encode_u8(shape: &[usize], data: &[u8]) -> Result<Vec<u8>> {
    if numel(shape) != data.len() {
        return Err(Error::shape("encode_u8", format!("{shape:?} vs {} bytes", data.len())));
    }
    let mut out = header(DType::U8, shape)?;
    out.extend_from_slice(data);
    Ok(out)
}

pub fn write<S: Scalar>(w: &mut impl Write, t: &Tensor<S>) -> Result<usize> {
    let bytes = encode(t)?;
    w.write_all(&bytes)?;
    Ok(bytes.len())
}

pub fn read(r: &mut impl Read) -> Result<CtnTensor> {
    let mut fixed = [0u8; 10];
    r.read_exact(&mut fixed)?;
    if &fixed[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &fixed[..4])));
    }
    let version = u32::from_le_bytes(fixed[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dtype = DType::from_code(fixed[8]).ok_or_else(|| Error::Format(format!("unknown dtype {}", fixed[8])))?;
    let rank = fixed[9] as usize;
    let mut dims = vec![0u8; 8 * rank];
    r.read_exact(&mut dims)?;
    let shape: Vec<usize> = dims
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Format("dims overflow".into()))?;
    let mut payload = vec![0u8; count * dtype.size_of()];
    r.read_exact(&mut payload)?;
    Ok(match dtype {
        DType::F32 => CtnTensor::F32(Tensor::raw(shape, payload.chunks_exact(4).map(f32::read_le).collect())),
        DType::F64 => CtnTensor::F64(Tensor::raw(shape, payload.chunks_exact(8).map(f64::read_le).collect())),
        DType::U8 => CtnTensor::U8 { shape, data: payload },
    })
}

pub fn decode(bytes: &[u8]) -> Result<CtnTensor> {
    let mut cur = bytes;
    read(&mut cur)
}

pub fn save<S: Scalar>(path: impl AsRef<std::path::Path>, t: &Tensor<S>) -> Result<()> {
    std::fs::write(path, encode(t)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<std::path::Path>) -> Result<CtnTensor> {
    decode(&std::fs::read(path)?)
}
