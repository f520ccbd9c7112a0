//! `TNSR` file format: magic, version 0x01, u8 rank, rank × u32 LE dims, f32 LE payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

const MAGIC: &[u8; 4] = b"TNSR";
const VERSION: u8 = 0x01;

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Result<Vec<u8>> {
    if t.rank() > u8::MAX as usize {
        return Err(Error::DimOverflow(t.dims.iter().map(|&d| d as u64).collect()));
    }
    let mut out = Vec::with_capacity(6 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(t.rank() as u8);
    for &d in &t.dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::DimOverflow(t.dims.iter().map(|&d| d as u64).collect()))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &t.data {
        let f = v.to_f32().unwrap_or(f32::NAN);
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let header_err = |expected| Error::Truncated {
        expected,
        actual: bytes.len(),
    };
    if bytes.len() < 6 {
        return Err(header_err(6));
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    let rank = bytes[5] as usize;
    let header_len = 6 + 4 * rank;
    if bytes.len() < header_len {
        return Err(header_err(header_len));
    }
    let dims: Vec<u64> = bytes[6..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as u64)
        .collect();
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= isize::MAX as u64))
        .ok_or_else(|| Error::DimOverflow(dims.clone()))? as usize;
    let expected = header_len + 4 * count;
    if bytes.len() < expected {
        return Err(header_err(expected));
    }
    let data = bytes[header_len..expected]
        .chunks_exact(4)
        .map(|c| T::from_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])).unwrap_or(T::nan()))
        .collect();
    Tensor::new(dims.into_iter().map(|d| d as usize).collect(), data)
}

pub fn read_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)?).map_err(|e| Error::io(path, e))
}
