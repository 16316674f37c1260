//! Model checkpoints, `CKPT1`: magic, `u32` blob count, then per blob a
//! `u32`-length-prefixed UTF-8 name, `u32` rank, `rank` x `u32` dims and the
//! f32 payload in row-major order.
//!
//! Optimizer momentum is stored as extra blobs whose names carry the
//! [`MOMENTUM_PREFIX`].

use std::path::Path;

use eventgait_core::model::{GaitModel, ModelConfig};
use eventgait_core::params::{self, NamedTensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{put_string, ByteReader};
use crate::error::{read_file, write_file, Error, Result};

pub const MAGIC: &[u8; 5] = b"CKPT1";
pub const MOMENTUM_PREFIX: &str = "momentum/";

pub fn encode(blobs: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
    for b in blobs {
        put_string(&mut out, &b.name);
        out.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
        for &d in &b.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &b.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = ByteReader::new(bytes);
    r.magic(MAGIC)?;
    let count = r.u32("blob count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let name = r.string("blob name")?;
        let at = r.offset();
        let rank = r.u32("rank")?;
        let shape = (0..rank)
            .map(|_| r.u32("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(at, format!("blob '{name}' size overflows")))?;
        let data = (0..len).map(|_| r.f32("blob value")).collect::<Result<Vec<_>>>()?;
        out.push(NamedTensor { name, shape, data });
    }
    r.finish()?;
    Ok(out)
}

/// Model parameters, plus momentum buffers when `velocity` is given.
pub fn blobs(model: &GaitModel, velocity: Option<&GaitModel>) -> Vec<NamedTensor> {
    let mut out = params::to_named(model);
    if let Some(v) = velocity {
        out.extend(params::to_named(v).into_iter().map(|mut t| {
            t.name = format!("{MOMENTUM_PREFIX}{}", t.name);
            t
        }));
    }
    out
}

/// Rebuilds the model described by `config` from checkpoint blobs. Returns
/// the momentum buffers too when the checkpoint has them.
pub fn restore(config: &ModelConfig, blobs: Vec<NamedTensor>) -> Result<(GaitModel, Option<GaitModel>)> {
    let mut model = GaitModel::new(&mut ChaCha8Rng::seed_from_u64(0), config.clone())?;
    let (momentum, weights): (Vec<_>, Vec<_>) = blobs.into_iter().partition(|b| b.name.starts_with(MOMENTUM_PREFIX));
    params::load_named(&mut model, &weights).map_err(|e| Error::Data(format!("checkpoint does not fit the configured model: {e}")))?;
    if momentum.is_empty() {
        return Ok((model, None));
    }
    let momentum: Vec<_> = momentum
        .into_iter()
        .map(|mut t| {
            t.name.drain(..MOMENTUM_PREFIX.len());
            t
        })
        .collect();
    let mut velocity = params::zeros_like(&model);
    params::load_named(&mut velocity, &momentum).map_err(|e| Error::Data(format!("checkpoint momentum: {e}")))?;
    Ok((model, Some(velocity)))
}

pub fn read(path: &Path) -> Result<Vec<NamedTensor>> {
    decode(&read_file(path)?)
}

pub fn write(path: &Path, blobs: &[NamedTensor]) -> Result<()> {
    write_file(path, &encode(blobs))
}
