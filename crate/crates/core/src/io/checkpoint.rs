//! Model archives: JSON metadata followed by one named TDF entry per
//! parameter tensor.
//!
//! ```text
//! "CVMCKPT1" | meta_len: u64 | meta (JSON) | count: u32 |
//!   count × (name_len: u32 | name | tdf_len: u64 | TDF bytes)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tdf::TdfTensor;
use crate::error::{Error, Result};
use crate::layers::{Architecture, Model};
use crate::params::ParamStore;
use crate::tensor::{DType, Scalar};

pub const MAGIC: &[u8; 8] = b"CVMCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub spec_hash: String,
    pub step: usize,
    pub seed: u64,
    pub dtype: DType,
    pub census: u64,
    pub architecture: Architecture,
}

pub struct Checkpoint<T> {
    pub meta: CheckpointMeta,
    pub model: Model<T>,
}

pub fn encode<T: Scalar>(model: &Model<T>, step: usize, seed: u64) -> Result<Vec<u8>> {
    let meta = CheckpointMeta {
        spec_hash: model.architecture().hash(),
        step,
        seed,
        dtype: T::DTYPE,
        census: model.census(),
        architecture: model.architecture().clone(),
    };
    let json = serde_json::to_vec_pretty(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for p in model.params().iter() {
        let tdf = TdfTensor::from_tensor(&p.value).encode()?;
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(tdf.len() as u64).to_le_bytes());
        out.extend_from_slice(&tdf);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!("{what}: needs {n} bytes, {} remain", self.bytes.len() - self.pos))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Parses only the metadata block.
pub fn decode_meta(bytes: &[u8]) -> Result<CheckpointMeta> {
    read_meta_block(&mut Reader { bytes, pos: 0 })
}

fn read_meta_block(r: &mut Reader) -> Result<CheckpointMeta> {
    if r.take(8, "header")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint archive".into()));
    }
    let len = r.u64("metadata length")?;
    let json = r.take(usize::try_from(len).map_err(|_| Error::Checkpoint("metadata too large".into()))?, "metadata")?;
    let meta: CheckpointMeta = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    if meta.architecture.hash() != meta.spec_hash {
        return Err(Error::Checkpoint("spec hash does not match the stored architecture".into()));
    }
    Ok(meta)
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, pos: 0 };
    let meta = read_meta_block(&mut r)?;
    let expected = meta.architecture.param_shapes()?;
    let census: u64 = expected.iter().map(|p| p.shape.iter().product::<usize>() as u64).sum();
    if census != meta.census {
        return Err(Error::Checkpoint(format!("architecture has {census} weights, metadata records {}", meta.census)));
    }
    let count = r.u32("entry count")? as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!("archive holds {count} tensors, architecture needs {}", expected.len())));
    }
    let mut params = ParamStore::default();
    for (i, want) in expected.iter().enumerate() {
        let name_len = r.u32(&format!("entry {i} name length"))? as usize;
        let name = std::str::from_utf8(r.take(name_len, &format!("entry {i} name"))?)
            .map_err(|_| Error::Checkpoint(format!("entry {i}: name is not UTF-8")))?
            .to_string();
        let named = |e: Error| Error::Checkpoint(format!("tensor `{name}`: {e}"));
        let len = r.u64("tensor length").map_err(named)?;
        let body = r.take(usize::try_from(len).unwrap_or(usize::MAX), "tensor data").map_err(named)?;
        let tensor = TdfTensor::decode(body).and_then(|t| t.to_tensor::<T>()).map_err(named)?;
        if name != want.name || tensor.shape() != want.shape {
            return Err(named(Error::Checkpoint(format!("expected `{}` {:?}, found {:?}", want.name, want.shape, tensor.shape()))));
        }
        params.insert(&name, tensor, want.lr_mult)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let model = Model::with_params(meta.architecture.clone(), params)?;
    Ok(Checkpoint { meta, model })
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, model: &Model<T>, step: usize, seed: u64) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model, step, seed)?).map_err(|e| Error::file(path, e))
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::file(path, e))?)
}

/// Loads after checking the stored census against `census`.
pub fn load_expecting<T: Scalar>(path: impl AsRef<Path>, census: u64) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    let meta = decode_meta(&bytes)?;
    if meta.census != census {
        return Err(Error::Checkpoint(format!("checkpoint holds {} weights, expected {census}", meta.census)));
    }
    decode(&bytes)
}
