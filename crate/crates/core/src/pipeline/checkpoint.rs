//! Model checkpoint, little-endian throughout:
//!
//! ```text
//! "BAHECKPT" | version u32 | header_len u32 | JSON header
//! | value_count u64 | value_count × f64 | CRC-32 u32
//! ```
//!
//! The header carries the model configuration and the name and shape of
//! every parameter tensor; values follow in the same order. The CRC covers
//! every byte between the magic and the trailer.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{CtrModel, ModelConfig, PipelineMode};
use super::PipelineError;
use crate::nn::Parameterized;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BAHECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Refuse headers and value blocks beyond these before allocating.
const MAX_HEADER: usize = 1 << 24;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    mode: PipelineMode,
    n_domains: usize,
    vocab_size: usize,
    params: Vec<(String, usize, usize)>,
}

pub fn encode_checkpoint(model: &CtrModel) -> Vec<u8> {
    let params = model.params();
    let header = Header {
        config: model.config.clone(),
        mode: model.mode,
        n_domains: model.n_domains,
        vocab_size: model.stack.config.vocab_size,
        params: params.iter().map(|p| (p.name.clone(), p.tensor.rows(), p.tensor.cols())).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let count: usize = params.iter().map(|p| p.tensor.len()).sum();
    let mut out = Vec::with_capacity(8 + 8 + json.len() + 8 + 8 * count + 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for p in &params {
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[8..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn corrupt(m: impl Into<String>) -> PipelineError {
    PipelineError::Corrupt(m.into())
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().expect("4 bytes"))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CtrModel, PipelineError> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(PipelineError::BadMagic);
    }
    if bytes.len() < 8 + 8 + 8 + 4 {
        return Err(corrupt("file is truncated"));
    }
    let version = le_u32(&bytes[8..12]);
    if version != CHECKPOINT_VERSION {
        return Err(PipelineError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = le_u32(trailer);
    let computed = crc32fast::hash(&body[8..]);
    if stored != computed {
        return Err(PipelineError::ChecksumMismatch { stored, computed });
    }
    let header_len = le_u32(&body[12..16]) as usize;
    if header_len > MAX_HEADER || 16 + header_len + 8 > body.len() {
        return Err(corrupt("header length out of range"));
    }
    let header: Header =
        serde_json::from_slice(&body[16..16 + header_len]).map_err(|e| corrupt(format!("header: {e}")))?;
    let values = &body[16 + header_len..];
    let count = u64::from_le_bytes(values[..8].try_into().expect("8 bytes"));
    let values = &values[8..];
    if count.checked_mul(8) != Some(values.len() as u64) {
        return Err(corrupt(format!("{count} values declared but {} bytes present", values.len())));
    }
    let declared: u128 = header.params.iter().map(|(_, r, c)| *r as u128 * *c as u128).sum();
    if declared != u128::from(count) {
        return Err(corrupt("parameter shapes do not match the value count"));
    }
    if lower_bound(&header).is_none_or(|n| n > u128::from(count)) {
        return Err(corrupt("model configuration is larger than the stored values"));
    }
    let mut model = CtrModel::new(header.config, header.mode, header.n_domains, header.vocab_size, 0)
        .map_err(|e| corrupt(format!("model: {e}")))?;
    let mut offset = 0;
    let mut views = model.params_mut();
    if views.len() != header.params.len() {
        return Err(corrupt("parameter list does not match the model"));
    }
    for (view, (name, rows, cols)) in views.iter_mut().zip(&header.params) {
        if view.name != *name || view.tensor.rows() != *rows || view.tensor.cols() != *cols {
            return Err(corrupt(format!("parameter {name} ({rows}x{cols}) does not match the model")));
        }
        for v in view.tensor.data_mut() {
            *v = f64::from_le_bytes(values[offset..offset + 8].try_into().expect("8 bytes"));
            offset += 8;
        }
    }
    Ok(model)
}

/// Parameters the configuration implies at minimum, so that a forged header
/// cannot make construction allocate more than the file holds.
fn lower_bound(h: &Header) -> Option<u128> {
    let c = &h.config;
    let d = c.d as u128;
    let layers = (c.l_low as u128).checked_add(c.l_high as u128)?;
    let embed = (h.vocab_size as u128).checked_mul(d)?;
    let blocks = layers.checked_mul(d.checked_mul(d)?.checked_mul(12)?)?;
    let segments = if h.mode == PipelineMode::Baseline { 1 } else { (h.n_domains as u128).checked_add(1)? };
    let head_in = segments.checked_mul(c.d_hat as u128)?;
    let hidden: u128 = c.fd_hidden.iter().chain(&c.head_hidden).map(|&w| w as u128).sum();
    embed.checked_add(blocks)?.checked_add(head_in)?.checked_add(hidden)
}

pub fn save_checkpoint(model: &CtrModel, path: &Path) -> Result<(), PipelineError> {
    fs::write(path, encode_checkpoint(model)).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<CtrModel, PipelineError> {
    let bytes = fs::read(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
    decode_checkpoint(&bytes)
}
