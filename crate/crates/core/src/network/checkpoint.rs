//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    b"GRASPFORGE-CKPT\n"          16 bytes
//! version  u32
//! header   u32 length + JSON {config, metadata}
//! count    u32
//! tensor*  u32 name length, name (UTF-8), u8 dtype (0 = f32, 1 = f64),
//!          u32 rank, u64 dims[rank], raw values
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{DType, Float, ParamSet, Tensor};

const MAGIC: &[u8; 16] = b"GRASPFORGE-CKPT\n";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epoch: u64,
    pub seed: u64,
    /// Loss function identifier, e.g. `standard` or `positional`.
    pub loss: String,
    /// The run configuration that produced the weights, if any.
    pub run_config: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    metadata: TrainingMetadata,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint<T = f32> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
    pub metadata: TrainingMetadata,
}

impl<T: Float> ModelCheckpoint<T> {
    pub fn from_model(model: &Model<T>, metadata: TrainingMetadata) -> Self {
        Self {
            config: model.config().clone(),
            params: model.params().clone(),
            metadata,
        }
    }

    pub fn into_model(self) -> Result<Model<T>> {
        Model::from_parts(self.config, self.params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            metadata: self.metadata.clone(),
        })
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let mut out = Vec::with_capacity(64 + header.len() + 4 * self.params.parameter_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_len(&mut out, header.len())?;
        out.extend_from_slice(&header);
        put_len(&mut out, self.params.len())?;
        for (name, tensor) in self.params.iter() {
            put_len(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE.tag());
            put_len(&mut out, tensor.shape().len())?;
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in tensor.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a graspforge checkpoint".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let header_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let count = r.u32()? as usize;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let tag = r.take(1)?[0];
            let dtype = DType::from_tag(tag)
                .ok_or_else(|| Error::Format(format!("unknown dtype tag {tag}")))?;
            if dtype != T::DTYPE {
                return Err(Error::Format(format!(
                    "tensor {name} is stored as {dtype:?} but {:?} was requested",
                    T::DTYPE
                )));
            }
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
                shape.push(
                    usize::try_from(d)
                        .map_err(|_| Error::Format(format!("dimension {d} too large")))?,
                );
            }
            let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let numel =
                numel.ok_or_else(|| Error::Format(format!("tensor {name} shape overflows")))?;
            let size = dtype.size();
            let raw = r.take(
                numel
                    .checked_mul(size)
                    .ok_or_else(|| Error::Format("tensor too large".into()))?,
            )?;
            let data = raw.chunks_exact(size).map(T::read_le).collect();
            params.insert(
                name,
                Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?,
            )?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            config: header.config,
            params,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_len(out: &mut Vec<u8>, len: usize) -> Result<()> {
    let len = u32::try_from(len).map_err(|_| Error::Format(format!("length {len} exceeds u32")))?;
    out.extend_from_slice(&len.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}
