//! Versioned checkpoint files.
//!
//! Layout: 8-byte magic, u32 LE header length, JSON header (format version,
//! network config, parameter names and shapes), then each parameter as
//! 32-bit little-endian floats in header order. Round-trips bit-exactly at
//! the stored f32 precision.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::network::{Network, NetworkConfig, Param};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"SSEGCKP\x01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("checkpoint format version {0} is not supported")]
    Version(u32),
    #[error("payload truncated for parameter {0}")]
    Truncated(String),
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: NetworkConfig,
    params: Vec<ParamMeta>,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint<F: Scalar>(net: &Network<F>, path: &Path) -> Result<(), CheckpointError> {
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        config: net.config.clone(),
        params: net
            .params
            .iter()
            .map(|p| ParamMeta { name: p.name.clone(), shape: p.shape.clone() })
            .collect(),
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for p in &net.params {
        for &v in &p.data {
            w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<Network<F>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)?;
    let mut header_bytes = vec![0u8; u32::from_le_bytes(len_bytes) as usize];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(header.format_version));
    }
    header
        .config
        .validate()
        .map_err(CheckpointError::Header)?;
    let mut params = Vec::with_capacity(header.params.len());
    for meta in header.params {
        let n: usize = meta.shape.iter().product();
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf)
            .map_err(|_| CheckpointError::Truncated(meta.name.clone()))?;
        let data = buf
            .chunks_exact(4)
            .map(|b| F::from_f64(f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))))
            .collect();
        params.push(Param { name: meta.name, shape: meta.shape, data });
    }
    Ok(Network { config: header.config, params })
}
