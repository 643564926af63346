//! Checkpoint layout:
//!
//! ```text
//! b"MEMQACK1" | u64 LE header length | JSON header | f32 LE tensor data
//! ```
//!
//! The header lists every tensor's name and shape in the order its data
//! follows. Optimizer moments are stored as `adam.m/<name>` and
//! `adam.v/<name>` after the weights.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::optim::AdamState;
use super::params::Params;
use super::state::ModelState;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MEMQACK1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
    adam_t: u64,
    lm_head_frozen: bool,
    tensors: Vec<TensorEntry>,
}

fn groups(state: &ModelState) -> [(&'static str, &Params); 3] {
    [
        ("", &state.params),
        ("adam.m/", &state.optimizer.m),
        ("adam.v/", &state.optimizer.v),
    ]
}

pub fn to_bytes(state: &ModelState) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    for (prefix, params) in groups(state) {
        for (name, t) in params.tensors() {
            tensors.push(TensorEntry {
                name: format!("{prefix}{name}"),
                shape: t.shape().to_vec(),
            });
            for &v in t.iter() {
                data.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    let header = serde_json::to_vec(&Header {
        config: state.config.clone(),
        step: state.step,
        adam_t: state.optimizer.t,
        lm_head_frozen: state.lm_head_frozen,
        tensors,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelState> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    header.config.validate()?;

    let mut params = Params::zeros(&header.config);
    let mut optimizer = AdamState::new(&params);
    optimizer.t = header.adam_t;
    let mut cursor = 16 + hlen;
    let mut entries = header.tensors.iter();
    for (prefix, target) in [
        ("", &mut params),
        ("adam.m/", &mut optimizer.m),
        ("adam.v/", &mut optimizer.v),
    ] {
        for (name, mut t) in target.tensors_mut() {
            let entry = entries
                .next()
                .ok_or_else(|| bad(&format!("missing tensor {prefix}{name}")))?;
            if entry.name != format!("{prefix}{name}") || entry.shape != t.shape() {
                return Err(bad(&format!(
                    "expected {prefix}{name} {:?}, found {} {:?}",
                    t.shape(),
                    entry.name,
                    entry.shape
                )));
            }
            let n = t.len() * 4;
            let raw = bytes
                .get(cursor..cursor + n)
                .ok_or_else(|| bad(&format!("truncated data for {}", entry.name)))?;
            for (dst, chunk) in t.iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
            }
            cursor += n;
        }
    }
    if cursor != bytes.len() || entries.next().is_some() {
        return Err(bad("trailing data"));
    }
    Ok(ModelState {
        config: header.config,
        params,
        lm_head_frozen: header.lm_head_frozen,
        optimizer,
        step: header.step,
    })
}

pub fn save(state: &ModelState, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &to_bytes(state)?)
}

pub fn load(path: &Path) -> Result<ModelState> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    from_bytes(&std::fs::read(path)?)
}

/// Rounds every weight and moment to the nearest f32 so that an in-memory
/// state matches what a save/load cycle would produce.
pub fn round_to_f32(state: &mut ModelState) {
    for p in [&mut state.params, &mut state.optimizer.m, &mut state.optimizer.v] {
        for (_, mut t) in p.tensors_mut() {
            t.mapv_inplace(|v| v as f32 as f64);
        }
    }
}
