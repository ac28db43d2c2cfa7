//! Checkpoint file: one JSON header line, then every parameter and buffer as
//! `u32 name_len | name | u32 ndim | u32 dims[ndim] | f32 data[..]`, all
//! little-endian, parameters first.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Model, NamedTensor};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::task::Task;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub epoch: usize,
    pub metric: f64,
    pub task: Task,
    pub crop_size: usize,
    pub num_params: usize,
    pub num_buffers: usize,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Model<f32>,
}

impl Checkpoint {
    pub fn new(model: Model<f32>, task: Task, epoch: usize, metric: f64, crop_size: usize) -> Self {
        Self {
            header: CheckpointHeader {
                config: model.config.clone(),
                epoch,
                metric,
                task,
                crop_size,
                num_params: model.params.len(),
                num_buffers: model.buffers.len(),
            },
            model,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(&self.header).map_err(|e| Error::json("checkpoint header", e))?;
        out.push(b'\n');
        for t in self.model.params.iter().chain(&self.model.buffers) {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |detail: &str| Error::Format {
            kind: "checkpoint",
            detail: detail.to_string(),
        };
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::json("checkpoint header", e))?;
        let mut cur = &bytes[nl + 1..];
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated tensor data"));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        let mut tensors = Vec::with_capacity(header.num_params + header.num_buffers);
        for _ in 0..header.num_params + header.num_buffers {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("tensor name is not utf-8"))?;
            let ndim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let data = take(4 * n)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if !cur.is_empty() {
            return Err(bad("trailing bytes"));
        }
        let buffers = tensors.split_off(header.num_params);
        let model = Model::from_tensors(&header.config, tensors, buffers)?;
        Ok(Self { header, model })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn roundtrip() {
        let m = Model::<f32>::build(&ModelConfig::tiny(4), &mut RngStream::new(1)).unwrap();
        let ck = Checkpoint::new(m, Task::Multiclass4, 7, 0.81, 32);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.header, ck.header);
        assert_eq!(back.model.params, ck.model.params);
        assert_eq!(back.model.buffers, ck.model.buffers);
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
