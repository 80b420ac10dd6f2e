//! Versioned little-endian checkpoint: model config followed by named
//! parameter tensors.
//!
//! ```text
//! magic "MSIC" | version u32
//! aggregator u8 | input_dim u32 | hidden_dim u32 | n_heads u32
//! n_attn_layers u32 | clam_k u32 | seed u64
//! n_params u32
//! per param: name_len u32 | name utf-8 | ndim u32 | dims u64 x ndim | data f64 x prod(dims)
//! ```

use std::path::Path;

use super::{Aggregator, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::io::binary::{Reader, Writer};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MSIC";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let c = &params.config;
    let mut w = Writer::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u8(c.aggregator.code());
    w.u32(c.input_dim as u32);
    w.u32(c.hidden_dim as u32);
    w.u32(c.n_heads as u32);
    w.u32(c.n_attn_layers as u32);
    w.u32(c.clam_k as u32);
    w.u64(c.seed);
    w.u32(params.names().len() as u32);
    for (name, t) in params.names().iter().zip(params.tensors()) {
        w.string(name);
        w.u32(t.shape().len() as u32);
        for &d in t.shape() {
            w.u64(d as u64);
        }
        for &v in t.data() {
            w.f64(v);
        }
    }
    w.finish()
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<ModelParams> {
    let mut r = Reader::new(bytes, path);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let agg = r.u8()?;
    let aggregator = Aggregator::from_code(agg)
        .ok_or_else(|| Error::format(path, format!("unknown aggregator code {agg}")))?;
    let config = ModelConfig {
        aggregator,
        input_dim: r.u32()? as usize,
        hidden_dim: r.u32()? as usize,
        n_heads: r.u32()? as usize,
        n_attn_layers: r.u32()? as usize,
        clam_k: r.u32()? as usize,
        seed: r.u64()?,
    };
    config
        .validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let n = r.u32()? as usize;
    let mut names = Vec::with_capacity(n.min(4096));
    let mut tensors = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        names.push(r.string()?);
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c <= r.remaining() / 8)
            .ok_or_else(|| Error::format(path, "tensor larger than remaining payload"))?;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(r.f64()?);
        }
        tensors.push(Tensor::new(shape, data).map_err(|e| Error::format(path, e.to_string()))?);
    }
    r.finish()?;
    ModelParams::from_parts(config, names, tensors).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
