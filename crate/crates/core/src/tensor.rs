//! Binary tensor blobs.
//!
//! Layout: magic `FATB`, version byte, dtype byte, rank byte, `rank`
//! little-endian u32 dimensions, then the little-endian payload.

use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FATB";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    U8(Vec<u8>),
    I8(Vec<i8>),
    I32(Vec<i32>),
    I64(Vec<i64>),
    F32(Vec<f32>),
}

impl TensorData {
    fn code(&self) -> u8 {
        match self {
            TensorData::U8(_) => 0,
            TensorData::I8(_) => 1,
            TensorData::I32(_) => 2,
            TensorData::I64(_) => 3,
            TensorData::F32(_) => 4,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::U8(v) => v.len(),
            TensorData::I8(v) => v.len(),
            TensorData::I32(v) => v.len(),
            TensorData::I64(v) => v.len(),
            TensorData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: TensorData) -> Result<Tensor> {
        let want: usize = dims.iter().map(|&d| d as usize).product();
        if want != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} hold {want} elements, payload has {}",
                data.len()
            )));
        }
        if dims.len() > u8::MAX as usize {
            return Err(Error::Shape("rank above 255".into()));
        }
        Ok(Tensor { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + 4 * self.dims.len() + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.data.code());
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::U8(v) => out.extend_from_slice(v),
            TensorData::I8(v) => out.extend(v.iter().map(|&x| x as u8)),
            TensorData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Tensor> {
        if b.len() < 7 || &b[..4] != MAGIC {
            return Err(Error::Format("missing FATB header".into()));
        }
        if b[4] != VERSION {
            return Err(Error::Format(format!("unsupported tensor version {}", b[4])));
        }
        let (code, rank) = (b[5], b[6] as usize);
        let body = &b[7..];
        if body.len() < 4 * rank {
            return Err(Error::Format("truncated dimensions".into()));
        }
        let dims: Vec<u32> = body[..4 * rank]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| Error::Format("dimension product overflows".into()))?;
        let payload = &body[4 * rank..];
        let width = match code {
            0 | 1 => 1,
            2 | 4 => 4,
            3 => 8,
            _ => return Err(Error::Format(format!("unknown dtype code {code}"))),
        };
        if count.checked_mul(width) != Some(payload.len()) {
            return Err(Error::Format(format!(
                "payload has {} bytes, dims need {count} x {width}",
                payload.len()
            )));
        }
        let data = match code {
            0 => TensorData::U8(payload.to_vec()),
            1 => TensorData::I8(payload.iter().map(|&x| x as i8).collect()),
            2 => TensorData::I32(payload.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect()),
            3 => TensorData::I64(payload.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()),
            _ => TensorData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
        };
        Ok(Tensor { dims, data })
    }

    pub fn read(path: &Path) -> Result<Tensor> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    /// Values as i64, for any integer dtype.
    pub fn to_i64(&self) -> Result<Vec<i64>> {
        Ok(match &self.data {
            TensorData::U8(v) => v.iter().map(|&x| x as i64).collect(),
            TensorData::I8(v) => v.iter().map(|&x| x as i64).collect(),
            TensorData::I32(v) => v.iter().map(|&x| x as i64).collect(),
            TensorData::I64(v) => v.clone(),
            TensorData::F32(_) => return Err(Error::Format("expected an integer tensor".into())),
        })
    }
}
