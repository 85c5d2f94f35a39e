//! Binary checkpoint container.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        8 bytes   "P2SQCKPT"
//! version      u32       1
//! config_len   u32       byte length of the config text
//! config       UTF-8     model configuration as TOML
//! count        u32       number of tensor records
//! count x record:
//!   name_len   u32
//!   name       UTF-8
//!   trainable  u8        1 for learnable weights, 0 for batch-norm buffers
//!   rows       u64
//!   cols       u64
//!   values     rows * cols IEEE-754 f64, row-major
//! ```
//!
//! Records appear in parameter-store order. Loading rebuilds the layout
//! from the stored config and requires every record to match it by name,
//! shape and flag.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"P2SQCKPT";
const VERSION: u32 = 1;

/// Serializes parameters into the checkpoint byte layout.
pub fn write_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = params.config.to_toml();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    out.extend_from_slice(&(params.store.len() as u32).to_le_bytes());
    for (_, p) in params.store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.trainable as u8);
        out.extend_from_slice(&(p.value.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(p.value.cols() as u64).to_le_bytes());
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

/// Parses checkpoint bytes.
pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let cfg_len = r.u32()? as usize;
    let cfg_text = r.string(cfg_len)?;
    let config = ModelConfig::from_toml(&cfg_text)
        .map_err(|e| Error::Checkpoint(format!("bad config header: {e}")))?;

    // Shapes come from the config; the values are overwritten below.
    let mut params = ModelParams::init(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let count = r.u32()? as usize;
    if count != params.store.len() {
        return Err(Error::Checkpoint(format!(
            "{count} records, config implies {}",
            params.store.len()
        )));
    }
    for expected in params.store.iter_mut() {
        let name_len = r.u32()? as usize;
        let name = r.string(name_len)?;
        let trainable = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(Error::Checkpoint(format!("bad trainable flag {b}"))),
        };
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        if name != expected.name
            || trainable != expected.trainable
            || (rows, cols) != expected.value.shape()
        {
            return Err(Error::Checkpoint(format!(
                "record {name:?} {rows}x{cols} does not match expected {:?} {:?}",
                expected.name,
                expected.value.shape()
            )));
        }
        let raw = r.take(rows * cols * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        expected.value = Tensor::from_vec(rows, cols, values)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, write_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
