//! Weight checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "MTAFCKPT"
//! version  u32
//! hlen     u64      length of the JSON header
//! header   hlen     {"config": ModelConfig, "tensors": [{name, shape, offset}]}
//! payload           f64 values of every tensor, in header order
//! ```
//!
//! The header is produced from ordered structs, so identical weights always
//! serialize to identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, MultiTaskModel};
use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"MTAFCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in f64 elements from the start of the payload.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes(model: &MultiTaskModel) -> Vec<u8> {
    let mut offset = 0;
    let tensors = model
        .params()
        .iter()
        .map(|p| {
            let e = TensorEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
                offset,
            };
            offset += p.numel();
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        config: model.config().clone(),
        tensors,
    })
    .expect("header is plain data");
    let mut out = Vec::with_capacity(20 + header.len() + offset * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for p in model.params().iter() {
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses a checkpoint into its config and raw parameter set.
pub fn parse(bytes: &[u8]) -> Result<(ModelConfig, ParamStore)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header_end = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&bytes[20..header_end]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let payload = &bytes[header_end..];
    let mut store = ParamStore::new();
    for t in header.tensors {
        let n: usize = t.shape.iter().product();
        let start = t.offset * 8;
        let end = start + n * 8;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!("tensor {} extends past end of file", t.name)));
        }
        let data = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.register(t.name, t.shape, data);
    }
    Ok((header.config, store))
}

pub fn from_bytes(bytes: &[u8]) -> Result<MultiTaskModel> {
    let (config, store) = parse(bytes)?;
    let mut model = MultiTaskModel::new(config)?;
    if model.params().len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, architecture has {}",
            store.len(),
            model.params().len()
        )));
    }
    for (dst, src) in model.params_mut().iter_mut().zip(store.iter()) {
        if dst.name != src.name || dst.shape != src.shape {
            return Err(Error::Checkpoint(format!(
                "tensor mismatch: checkpoint has {} {:?}, architecture expects {} {:?}",
                src.name, src.shape, dst.name, dst.shape
            )));
        }
        dst.data.clone_from(&src.data);
    }
    Ok(model)
}

pub fn save(model: &MultiTaskModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<MultiTaskModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads a checkpoint and checks it was built for `expected`.
pub fn load_expecting(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<MultiTaskModel> {
    let model = load(path)?;
    let got = model.config();
    let mut diffs = Vec::new();
    if got.num_aus != expected.num_aus {
        diffs.push(format!("num_aus: checkpoint {} vs expected {}", got.num_aus, expected.num_aus));
    }
    if got.num_expressions != expected.num_expressions {
        diffs.push(format!(
            "num_expressions: checkpoint {} vs expected {}",
            got.num_expressions, expected.num_expressions
        ));
    }
    if got.pyramid_channels != expected.pyramid_channels {
        diffs.push(format!(
            "pyramid_channels: checkpoint {} vs expected {}",
            got.pyramid_channels, expected.pyramid_channels
        ));
    }
    if got.backbone_variant != expected.backbone_variant {
        diffs.push(format!(
            "backbone_variant: checkpoint {:?} vs expected {:?}",
            got.backbone_variant, expected.backbone_variant
        ));
    }
    if got.input_size != expected.input_size {
        diffs.push(format!("input_size: checkpoint {:?} vs expected {:?}", got.input_size, expected.input_size));
    }
    if got.va_bounding != expected.va_bounding || got.fusion_smoothing != expected.fusion_smoothing {
        diffs.push("head/fusion options differ".to_string());
    }
    if diffs.is_empty() {
        Ok(model)
    } else {
        Err(Error::Checkpoint(format!("config mismatch: {}", diffs.join("; "))))
    }
}

/// SHA-256 of the serialized checkpoint, hex encoded.
pub fn digest(model: &MultiTaskModel) -> String {
    hex::encode(Sha256::digest(to_bytes(model)))
}
