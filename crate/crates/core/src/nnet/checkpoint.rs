//! `RMDP` checkpoints: magic, `u32` version, `u64` parameter count, the flat
//! parameters as little-endian `f64`, the optimizer state (`u64` step, `lr`,
//! `beta1`, `beta2`, `eps`, `u64` moment length, first then second moments),
//! and finally the model shape as four `u32` (levels, d_emb, hidden, channels).

use std::path::Path;

use super::{ModelParams, ModelShape, OptimizerState};
use crate::binio::{memory_path, read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RMDP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let flat = self.params.flatten();
        let mut w = Writer::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        w.u64(flat.len() as u64);
        w.f64s(&flat);
        let o = &self.optimizer;
        w.u64(o.step);
        for v in [o.lr, o.beta1, o.beta2, o.eps] {
            w.f64(v);
        }
        w.u64(o.m.len() as u64);
        w.f64s(&o.m);
        w.f64s(&o.v);
        let s = self.params.shape();
        for v in [s.levels, s.d_emb, s.hidden, s.channels] {
            w.u32(v as u32);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::open(bytes, path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let count = r.u64()? as usize;
        let flat = r.f64s(count)?;
        let step = r.u64()?;
        let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let len = r.u64()? as usize;
        let m = r.f64s(len)?;
        let v = r.f64s(len)?;
        let shape = ModelShape {
            levels: r.u32()? as usize,
            d_emb: r.u32()? as usize,
            hidden: r.u32()? as usize,
            channels: r.u32()? as usize,
        };
        r.finish()?;
        if len != count {
            return Err(Error::LengthMismatch {
                expected: count,
                actual: len,
            });
        }
        Ok(Self {
            params: ModelParams::unflatten(&shape, &flat)?,
            optimizer: OptimizerState {
                m,
                v,
                step,
                lr,
                beta1,
                beta2,
                eps,
            },
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_file(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&read_file(path)?, path)
}

impl Checkpoint {
    pub fn from_memory(bytes: &[u8]) -> Result<Self> {
        Self::from_bytes(bytes, &memory_path())
    }
}
