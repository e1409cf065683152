//! Binary checkpoint container.
//!
//! Layout, all integers and floats little-endian:
//! magic `HDIFFCKP`, `u32` version, kind string, JSON model config,
//! `u64` optimizer step, `u32` completed epochs, parameter arrays,
//! a `u8` momentum flag with optional momentum arrays, and the end marker
//! `HDIFFEND`. Strings are `u32` length plus UTF-8 bytes. An array block is a
//! `u32` count followed by name, `u32` rank, `u64` dims and `f64` data.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{Model, ModelConfig, ModelKind};
use crate::numerics::{ParamSet, RealArray};

use super::optimizer::OptimizerState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HDIFFCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const END_MARKER: &[u8; 8] = b"HDIFFEND";

/// A model with the optimizer progress needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<OptimizerState>,
    pub epochs_done: u32,
}

impl Checkpoint {
    pub fn fresh(model: Model) -> Self {
        Self {
            model,
            optimizer: None,
            epochs_done: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.optimizer.as_ref().map_or(0, |o| o.step)
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn put_arrays(buf: &mut Vec<u8>, set: &ParamSet) {
    put_u32(buf, set.len() as u32);
    for (name, value) in set.iter() {
        put_str(buf, name);
        put_u32(buf, value.shape().len() as u32);
        for &d in value.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in value.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    put_str(&mut buf, ckpt.model.kind().as_str());
    let config = serde_json::to_string(&ckpt.model.config)
        .map_err(|e| Error::Checkpoint(format!("cannot encode config: {e}")))?;
    put_str(&mut buf, &config);
    buf.extend_from_slice(&ckpt.step().to_le_bytes());
    put_u32(&mut buf, ckpt.epochs_done);
    put_arrays(&mut buf, &ckpt.model.params);
    match &ckpt.optimizer {
        Some(opt) => {
            buf.push(1);
            put_arrays(&mut buf, &opt.momentum);
        }
        None => buf.push(0),
    }
    buf.extend_from_slice(END_MARKER);
    Ok(buf)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("file is truncated or corrupt at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }

    fn arrays(&mut self) -> Result<ParamSet> {
        let count = self.u32()?;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let name = self.string()?;
            let rank = self.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("dimension overflows".into()))?);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("array {name} is too large")))?;
            let raw = self.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint("array too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            set.insert(name, RealArray::new(shape, data)?);
        }
        Ok(set)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let kind: ModelKind = r.string()?.parse().map_err(|e: Error| Error::Checkpoint(e.to_string()))?;
    let config: ModelConfig =
        serde_json::from_str(&r.string()?).map_err(|e| Error::Checkpoint(format!("bad config: {e}")))?;
    if config.kind != kind {
        return Err(Error::Checkpoint("header kind disagrees with the stored config".into()));
    }
    let step = r.u64()?;
    let epochs_done = r.u32()?;
    let params = r.arrays()?;
    let optimizer = match r.u8()? {
        0 => None,
        1 => Some(OptimizerState {
            momentum: r.arrays()?,
            step,
        }),
        other => return Err(Error::Checkpoint(format!("bad momentum flag {other}"))),
    };
    if r.take(8)? != END_MARKER.as_slice() || r.pos != bytes.len() {
        return Err(Error::Checkpoint("missing end marker or trailing bytes".into()));
    }
    let model = Model::from_parts(config, params)?;
    if let Some(opt) = &optimizer {
        opt.check_matches(&model.params)?;
    }
    Ok(Checkpoint {
        model,
        optimizer,
        epochs_done,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// Loads a checkpoint and requires it to hold a model of `kind`.
pub fn load_model_as(path: &Path, kind: ModelKind) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.model.kind() != kind {
        return Err(Error::Checkpoint(format!(
            "kind mismatch: file holds {}, expected {kind}",
            ckpt.model.kind()
        )));
    }
    Ok(ckpt)
}
