//! Self-describing parameter container.
//!
//! Layout:
//!
//! ```text
//! b"SSDNCKPT"            8 bytes
//! format version         u32 little-endian
//! header length          u64 little-endian
//! header                 UTF-8 JSON (CheckpointHeader)
//! payload                raw little-endian scalars, tensors back to back
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use ssdn_engine::{DType, Real, Tensor};

use super::arch::ArchConfig;
use super::registry::{Group, ParamRegistry};
use crate::error::{Error, Result};
use crate::model::BridgeConfig;

pub const MAGIC: &[u8; 8] = b"SSDNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub group: Group,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub arch: ArchConfig,
    pub bridge: Option<BridgeConfig>,
    pub tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<T: Real, W: Write>(
    mut out: W,
    arch: &ArchConfig,
    bridge: Option<&BridgeConfig>,
    registry: &ParamRegistry<T>,
) -> Result<()> {
    let mut offset = 0u64;
    let mut tensors = Vec::with_capacity(registry.len());
    for (name, p) in registry.iter() {
        let bytes = (p.value.numel() * T::DTYPE.size_of()) as u64;
        tensors.push(TensorEntry {
            name: name.to_string(),
            group: p.group,
            dtype: T::DTYPE.name().to_string(),
            shape: p.value.shape().to_vec(),
            offset,
            bytes,
        });
        offset += bytes;
    }
    let header = CheckpointHeader { format_version: FORMAT_VERSION, arch: arch.clone(), bridge: bridge.copied(), tensors };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for (_, p) in registry.iter() {
        out.write_all(&T::to_le_bytes_vec(p.value.data()))?;
    }
    Ok(())
}

fn parse_dtype(s: &str) -> Result<DType> {
    match s {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(Error::Format(format!("checkpoint: unknown dtype `{other}`"))),
    }
}

/// Reads a checkpoint, converting stored scalars to `T` when the dtypes differ.
pub fn read_checkpoint<T: Real, R: Read>(mut input: R) -> Result<(CheckpointHeader, ParamRegistry<T>)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("checkpoint: bad magic".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("checkpoint: unsupported format version {version}")));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    input.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;

    let mut registry = ParamRegistry::new();
    for e in &header.tensors {
        let dtype = parse_dtype(&e.dtype)?;
        let numel: usize = e.shape.iter().product();
        let (start, end) = (e.offset as usize, (e.offset + e.bytes) as usize);
        if e.bytes as usize != numel * dtype.size_of() || end > payload.len() {
            return Err(Error::Format(format!("checkpoint: tensor `{}` truncated or mis-sized", e.name)));
        }
        let raw = &payload[start..end];
        let value: Tensor<T> = match dtype {
            DType::F32 => Tensor::new(e.shape.clone(), f32::from_le_bytes_slice(raw))?.cast(),
            DType::F64 => Tensor::new(e.shape.clone(), f64::from_le_bytes_slice(raw))?.cast(),
        };
        registry.insert(e.name.clone(), value, e.group)?;
    }
    Ok((header, registry))
}
