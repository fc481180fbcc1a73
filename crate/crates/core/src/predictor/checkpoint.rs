//! Checkpoint file layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "RETSEGCK"
//! version      u32      1
//! config hash  32 bytes SHA-256 of the config text
//! config len   u32
//! config text  UTF-8 key=value lines (PredictorConfig::to_text)
//! weight count u64
//! weights      f64 * count
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::{Model, PredictorConfig};

pub const MAGIC: &[u8; 8] = b"RETSEGCK";
pub const VERSION: u32 = 1;

pub fn config_hash(config: &PredictorConfig) -> [u8; 32] {
    Sha256::digest(config.to_text().as_bytes()).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode(model: &Model) -> Vec<u8> {
    let text = model.config.to_text();
    let mut out = Vec::with_capacity(64 + text.len() + model.state.weights.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&config_hash(&model.config));
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(model.state.weights.len() as u64).to_le_bytes());
    for w in &model.state.weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::data("checkpoint is truncated"))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, at: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::data("not a retseg checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::data(format!("unsupported checkpoint version {version}")));
    }
    let hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::data("checkpoint config is not UTF-8"))?;
    let config = PredictorConfig::from_text(text)?;
    if config_hash(&config) != hash {
        return Err(Error::data("checkpoint config hash mismatch"));
    }
    let count = r.u64()? as usize;
    let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::data("weight count overflow"))?)?;
    if r.at != bytes.len() {
        return Err(Error::data("trailing bytes after checkpoint weights"));
    }
    let weights = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Model::from_weights(config, weights)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
