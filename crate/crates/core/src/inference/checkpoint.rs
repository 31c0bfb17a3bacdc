//! Versioned chain checkpoints.
//!
//! Layout: the magic bytes `SFCRCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a JSON header and then every curve
//! trace as little-endian `f32` in [`ChainOutput::curves`] order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ChainOutput, RunConfig};
use crate::error::{Error, Result};
use crate::basis::Grid;
use crate::model::{Hyperparams, ModelState};

pub const MAGIC: &[u8; 8] = b"SFCRCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub chain: usize,
    pub iteration: usize,
    pub config: RunConfig,
    pub hp: Hyperparams,
    /// Digest of the data and hyperparameters the chain was run on.
    pub fingerprint: String,
    pub grid: Grid,
    pub sites: Vec<String>,
    pub state: ModelState,
    pub rng: ChaCha8Rng,
    pub output: ChainOutput,
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(ckpt)?;
    let payload: usize = ckpt.output.curves().map(|c| c.values.len()).sum();
    let mut out = Vec::with_capacity(20 + header.len() + 4 * payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for c in ckpt.output.curves() {
        for v in &c.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::Checkpoint("file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| Error::Checkpoint("truncated version".into()))?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint format version {version} is incompatible with version {VERSION}"
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| Error::Checkpoint("truncated header length".into()))?;
    let len = u64::from_le_bytes(len) as usize;
    if r.len() < len {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let mut ckpt: Checkpoint = serde_json::from_slice(&r[..len])?;
    r = &r[len..];
    let draws = ckpt.output.draws();
    for c in ckpt.output.curves_mut() {
        let count = c.width * draws;
        if r.len() < 4 * count {
            return Err(Error::Checkpoint("truncated curve payload".into()));
        }
        c.values = r[..4 * count]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        r = &r[4 * count..];
    }
    if !r.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
    }
    Ok(ckpt)
}

/// Writes through a temporary file so a crash never leaves a partial file.
pub fn write(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode(ckpt)?)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
