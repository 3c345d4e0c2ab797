//! Minimal binary array container: `AMTC`, u32 version, u32 rank, u64 dims,
//! then row-major little-endian f32 values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"AMTC";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ArrayF32 {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl ArrayF32 {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::domain(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| v as f32).collect())
    }
}

pub fn encode_array(a: &ArrayF32) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * a.shape.len() + 4 * a.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
    for &d in &a.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in &a.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_array(b: &[u8], path: &Path) -> Result<ArrayF32> {
    let err = |offset: usize, msg: &str| Error::Format {
        path: path.to_path_buf(),
        what: "array container",
        offset: offset as u64,
        msg: msg.to_string(),
    };
    if b.len() < 12 || &b[..4] != MAGIC {
        return Err(err(0, "missing AMTC magic"));
    }
    let version = u32::from_le_bytes(b[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(err(4, &format!("unsupported version {version}")));
    }
    let ndim = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
    let data_at = 12 + 8 * ndim;
    if b.len() < data_at {
        return Err(err(12, "truncated shape header"));
    }
    let shape: Vec<usize> =
        (0..ndim).map(|i| u64::from_le_bytes(b[12 + 8 * i..20 + 8 * i].try_into().unwrap()) as usize).collect();
    let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| err(12, "shape overflows"))?;
    if b.len() - data_at != n * 4 {
        return Err(err(data_at, &format!("expected {} data bytes, found {}", n * 4, b.len() - data_at)));
    }
    let data = b[data_at..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(ArrayF32 { shape, data })
}

pub fn write_array(path: &Path, a: &ArrayF32) -> Result<()> {
    fs::write(path, encode_array(a)).map_err(|e| Error::io(path, e))
}

pub fn read_array(path: &Path) -> Result<ArrayF32> {
    let b = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_array(&b, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let a = ArrayF32::new(vec![2, 3], vec![0.0, 1.0, -2.5, 3.25, 1e-8, 7.0]).unwrap();
        assert_eq!(decode_array(&encode_array(&a), Path::new("a")).unwrap(), a);
        let s = ArrayF32::new(vec![], vec![4.0]).unwrap();
        assert_eq!(decode_array(&encode_array(&s), Path::new("a")).unwrap(), s);
    }

    #[test]
    fn rejects_truncation() {
        let a = ArrayF32::new(vec![4], vec![1.0; 4]).unwrap();
        let b = encode_array(&a);
        assert!(matches!(decode_array(&b[..b.len() - 1], Path::new("a")), Err(Error::Format { offset: 20, .. })));
        assert!(ArrayF32::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
