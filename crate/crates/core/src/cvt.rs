//! CVT1: a minimal little-endian n-d array container.
//!
//! ```text
//! "CVT1" | version u16 = 1 | dtype u8 | ndim u8 | ndim x u64 dims | row-major payload
//! ```
//! dtype: 0 = f32, 1 = f64, 2 = u8, 3 = i32.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{io_err, CoreError, Result};

pub const MAGIC: &[u8; 4] = b"CVT1";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum CvtData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    I32(Vec<i32>),
}

impl CvtData {
    pub fn dtype(&self) -> u8 {
        match self {
            CvtData::F32(_) => 0,
            CvtData::F64(_) => 1,
            CvtData::U8(_) => 2,
            CvtData::I32(_) => 3,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            CvtData::F32(v) => v.len(),
            CvtData::F64(v) => v.len(),
            CvtData::U8(v) => v.len(),
            CvtData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn elem_size(dtype: u8) -> Option<usize> {
        match dtype {
            0 => Some(4),
            1 => Some(8),
            2 => Some(1),
            3 => Some(4),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvtArray {
    pub shape: Vec<usize>,
    pub data: CvtData,
}

impl CvtArray {
    pub fn new(shape: Vec<usize>, data: CvtData) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(CoreError::Invalid(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if shape.len() > u8::MAX as usize {
            return Err(CoreError::Invalid(format!("{} dimensions is too many", shape.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, CvtData::F32(data))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.shape.len() + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.data.dtype());
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            CvtData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            CvtData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            CvtData::U8(v) => out.extend_from_slice(v),
            CvtData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |detail: String| CoreError::Format {
            path: path.to_path_buf(),
            detail,
        };
        if bytes.len() < 8 {
            return Err(fail(format!("truncated header ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(fail(format!("bad magic {:?}", &bytes[..4])));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        let dtype = bytes[6];
        let ndim = bytes[7] as usize;
        let esize = CvtData::elem_size(dtype).ok_or_else(|| fail(format!("unknown dtype {dtype}")))?;
        let header = 8 + 8 * ndim;
        if bytes.len() < header {
            return Err(fail("truncated dimensions".into()));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut count: usize = 1;
        for i in 0..ndim {
            let off = 8 + 8 * i;
            let d = u64::from_le_bytes(bytes[off..off + 8].try_into().expect("8 bytes"));
            let d = usize::try_from(d).map_err(|_| fail(format!("dimension {d} overflows")))?;
            count = count
                .checked_mul(d)
                .ok_or_else(|| fail(format!("element count overflows at dim {i}")))?;
            shape.push(d);
        }
        let payload = &bytes[header..];
        let want = count
            .checked_mul(esize)
            .ok_or_else(|| fail("payload size overflows".into()))?;
        if payload.len() != want {
            return Err(fail(format!("payload has {} bytes, expected {want}", payload.len())));
        }
        let data = match dtype {
            0 => CvtData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            1 => CvtData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
            2 => CvtData::U8(payload.to_vec()),
            _ => CvtData::I32(
                payload
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
        };
        Ok(Self { shape, data })
    }

    pub fn into_f32(self) -> Result<(Vec<usize>, Vec<f32>)> {
        match self.data {
            CvtData::F32(v) => Ok((self.shape, v)),
            CvtData::F64(v) => Ok((self.shape, v.into_iter().map(|x| x as f32).collect())),
            other => Err(CoreError::Invalid(format!(
                "expected floating point data, found dtype {}",
                other.dtype()
            ))),
        }
    }

    pub fn into_u8(self) -> Result<(Vec<usize>, Vec<u8>)> {
        match self.data {
            CvtData::U8(v) => Ok((self.shape, v)),
            other => Err(CoreError::Invalid(format!(
                "expected u8 data, found dtype {}",
                other.dtype()
            ))),
        }
    }

    pub fn into_i32(self) -> Result<(Vec<usize>, Vec<i32>)> {
        match self.data {
            CvtData::I32(v) => Ok((self.shape, v)),
            other => Err(CoreError::Invalid(format!(
                "expected i32 data, found dtype {}",
                other.dtype()
            ))),
        }
    }
}

pub fn write_tensor(path: &Path, array: &CvtArray) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&array.to_bytes()).map_err(io_err(path))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<CvtArray> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    CvtArray::from_bytes(&bytes, path)
}

pub fn write_f32(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    write_tensor(path, &CvtArray::f32(shape.to_vec(), data.to_vec())?)
}

pub fn read_f32(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    read_tensor(path)?.into_f32()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_2x3_file_size() {
        let a = CvtArray::f32(vec![2, 3], (0..6).map(|v| v as f32).collect()).unwrap();
        let b = a.to_bytes();
        assert_eq!(b.len(), 4 + 2 + 1 + 1 + 2 * 8 + 24);
        assert_eq!(CvtArray::from_bytes(&b, Path::new("x")).unwrap(), a);
    }

    #[test]
    fn scalar_round_trips() {
        let a = CvtArray::new(vec![], CvtData::F64(vec![1.5])).unwrap();
        let b = a.to_bytes();
        assert_eq!(b.len(), 16);
        assert_eq!(CvtArray::from_bytes(&b, Path::new("x")).unwrap(), a);
    }

    #[test]
    fn corrupted_magic_rejected() {
        let a = CvtArray::new(vec![1], CvtData::U8(vec![7])).unwrap();
        let mut b = a.to_bytes();
        b[0] = b'X';
        assert!(CvtArray::from_bytes(&b, Path::new("x")).is_err());
    }

    #[test]
    fn truncated_and_overflowing_rejected() {
        let a = CvtArray::new(vec![4], CvtData::I32(vec![1, 2, 3, 4])).unwrap();
        let b = a.to_bytes();
        assert!(CvtArray::from_bytes(&b[..b.len() - 1], Path::new("x")).is_err());
        let mut huge = b[..8].to_vec();
        huge[7] = 2;
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(CvtArray::from_bytes(&huge, Path::new("x")).is_err());
    }
}
