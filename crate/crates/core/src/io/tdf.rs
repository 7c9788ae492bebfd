//! Single-tensor binary files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TDF1" | dtype: u8 (1 = f32, 2 = f64, 3 = i32) | rank: u8 | dims: rank × u64 | payload
//! ```
//!
//! The payload is the row-major element buffer and its length must equal
//! the element count times the element size exactly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"TDF1";

#[derive(Clone, Debug, PartialEq)]
pub enum TdfData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
}

impl TdfData {
    fn code(&self) -> u8 {
        match self {
            TdfData::F32(_) => 1,
            TdfData::F64(_) => 2,
            TdfData::I32(_) => 3,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TdfData::F32(v) => v.len(),
            TdfData::F64(v) => v.len(),
            TdfData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TdfTensor {
    pub shape: Vec<usize>,
    pub data: TdfData,
}

impl TdfTensor {
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        let data = match T::DTYPE {
            DType::Float32 => TdfData::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
            DType::Float64 => TdfData::F64(t.data().iter().map(|v| v.as_f64()).collect()),
        };
        TdfTensor { shape: t.shape().to_vec(), data }
    }

    pub fn from_i32(shape: &[usize], data: Vec<i32>) -> Result<Self> {
        let t = TdfTensor { shape: shape.to_vec(), data: TdfData::I32(data) };
        t.check()?;
        Ok(t)
    }

    /// Converts floating-point contents to `T`; integer files are rejected.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let data: Vec<T> = match &self.data {
            TdfData::F32(v) => v.iter().map(|&x| T::from_f64(x as f64)).collect(),
            TdfData::F64(v) => v.iter().map(|&x| T::from_f64(x)).collect(),
            TdfData::I32(_) => return Err(Error::Format("expected floating-point data, found int32".into())),
        };
        Tensor::from_vec(&self.shape, data)
    }

    fn check(&self) -> Result<()> {
        if self.shape.len() > u8::MAX as usize {
            return Err(Error::Format(format!("rank {} exceeds 255", self.shape.len())));
        }
        if self.shape.contains(&0) {
            return Err(Error::Format(format!("zero extent in {:?}", self.shape)));
        }
        let count: usize = self.shape.iter().product();
        if count != self.data.len() {
            return Err(Error::Format(format!("shape {:?} needs {count} elements, found {}", self.shape, self.data.len())));
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.check()?;
        let size = match self.data {
            TdfData::F64(_) => 8,
            _ => 4,
        };
        let mut out = Vec::with_capacity(6 + 8 * self.shape.len() + size * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(self.data.code());
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TdfData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TdfData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TdfData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Format(m);
        if bytes.len() < 6 || &bytes[..4] != MAGIC {
            return Err(bad("missing TDF1 header".into()));
        }
        let (code, rank) = (bytes[4], bytes[5] as usize);
        let size = match code {
            1 | 3 => 4,
            2 => 8,
            c => return Err(bad(format!("unknown dtype code {c}"))),
        };
        let dims_end = 6 + 8 * rank;
        if bytes.len() < dims_end {
            return Err(bad(format!("header declares rank {rank} but holds {} bytes", bytes.len())));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count: u128 = 1;
        for chunk in bytes[6..dims_end].chunks_exact(8) {
            let d = u64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            if d == 0 {
                return Err(bad("zero extent".into()));
            }
            count *= d as u128;
            shape.push(usize::try_from(d).map_err(|_| bad(format!("extent {d} too large")))?);
        }
        let payload = &bytes[dims_end..];
        if payload.len() as u128 != count * size as u128 {
            return Err(bad(format!("payload holds {} bytes, header {shape:?} requires {}", payload.len(), count * size as u128)));
        }
        let data = match code {
            1 => TdfData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect()),
            2 => TdfData::F64(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()),
            _ => TdfData::I32(payload.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes"))).collect()),
        };
        Ok(TdfTensor { shape, data })
    }
}

pub fn write_file(path: impl AsRef<Path>, t: &TdfTensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, t.encode()?).map_err(|e| Error::file(path, e))
}

pub fn read_file(path: impl AsRef<Path>) -> Result<TdfTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    TdfTensor::decode(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
