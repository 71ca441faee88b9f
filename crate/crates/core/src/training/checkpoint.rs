//! Binary checkpoints: a little-endian `u64` header length, a JSON header,
//! then one `u64` count plus that many `f64` values per parameter block.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fit::TrainConfig;
use crate::error::{GpnError, Result};
use crate::model::{Gpn, GpnConfig};

const FORMAT: &str = "gpn-checkpoint";
const VERSION: u32 = 1;
// Guards against reading a garbage length and allocating it.
const MAX_HEADER: u64 = 64 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub config: GpnConfig,
    pub seed: u64,
    pub hyperparameters: Option<TrainConfig>,
    pub blocks: Vec<BlockInfo>,
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &Gpn, seed: u64, hyper: Option<&TrainConfig>) -> Result<()> {
    let named = model.named_parameters();
    let header = CheckpointHeader {
        format: FORMAT.into(),
        version: VERSION,
        config: model.config().clone(),
        seed,
        hyperparameters: hyper.cloned(),
        blocks: named
            .iter()
            .map(|(name, _, p)| BlockInfo {
                name: name.clone(),
                len: p.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, _, p) in &named {
        w.write_all(&(p.len() as u64).to_le_bytes())?;
        for v in p.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| GpnError::Checkpoint(format!("truncated while reading {what}: {e}")))?;
    Ok(u64::from_le_bytes(buf))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(Gpn, CheckpointHeader)> {
    let header_len = read_u64(&mut r, "header length")?;
    if header_len > MAX_HEADER {
        return Err(GpnError::Checkpoint(format!("header length {header_len} is implausible")));
    }
    let mut json = vec![0u8; header_len as usize];
    r.read_exact(&mut json)
        .map_err(|e| GpnError::Checkpoint(format!("truncated header: {e}")))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| GpnError::Checkpoint(format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(GpnError::Checkpoint(format!("unknown format {:?}", header.format)));
    }
    if header.version != VERSION {
        return Err(GpnError::Checkpoint(format!("unsupported version {}", header.version)));
    }
    header.config.validate()?;

    let mut blocks = Vec::with_capacity(header.blocks.len());
    for info in &header.blocks {
        let count = read_u64(&mut r, &info.name)?;
        if count != info.len as u64 {
            return Err(GpnError::Checkpoint(format!(
                "block {} holds {count} values, header says {}",
                info.name, info.len
            )));
        }
        let mut bytes = vec![0u8; info.len * 8];
        r.read_exact(&mut bytes)
            .map_err(|e| GpnError::Checkpoint(format!("truncated block {}: {e}", info.name)))?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        blocks.push(values);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(GpnError::Checkpoint("trailing bytes after last block".into()));
    }
    let model = Gpn::from_blocks(header.config.clone(), &blocks)?;
    for ((name, _, _), info) in model.named_parameters().iter().zip(&header.blocks) {
        if *name != info.name {
            return Err(GpnError::Checkpoint(format!("expected block {name}, found {}", info.name)));
        }
    }
    Ok((model, header))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Gpn, seed: u64, hyper: Option<&TrainConfig>) -> Result<()> {
    let file = File::create(path)?;
    write_checkpoint(BufWriter::new(file), model, seed, hyper)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Gpn, CheckpointHeader)> {
    let file = File::open(path)?;
    read_checkpoint(BufReader::new(file))
}
