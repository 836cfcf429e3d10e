//! Checkpoint layout: the 8 magic bytes `CASTCKPT`, a little-endian `u32`
//! format version, a little-endian `u64` manifest length, the UTF-8 JSON
//! manifest, then the tensor payloads back to back in manifest order.
//! Offsets in the manifest are relative to the start of the payload section.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{OptimizerState, Result, TrainError, TrainState};
use crate::model::{ModelConfig, ParameterStore};
use crate::tensor::{DType, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CASTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const M_PREFIX: &str = "optimizer.m.";
const V_PREFIX: &str = "optimizer.v.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub byte_length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub step: u64,
    pub seed: u64,
    pub payload_length: u64,
    /// Hex SHA-256 of the payload section.
    pub payload_sha256: String,
    pub tensors: Vec<TensorEntry>,
}

/// A loaded checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub state: TrainState<T>,
    pub vocab_hash: String,
    pub seed: u64,
}

impl<T: Scalar> Checkpoint<T> {
    /// Fails unless the checkpoint was trained with vocabulary `vocab_hash`.
    pub fn check_vocab(&self, vocab_hash: &str) -> Result<()> {
        if self.vocab_hash != vocab_hash {
            return Err(TrainError::Compatibility {
                expected: self.vocab_hash.clone(),
                found: vocab_hash.to_string(),
            });
        }
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serializes `state` to checkpoint bytes.
pub fn checkpoint_bytes<T: Scalar>(state: &TrainState<T>, vocab_hash: &str, seed: u64) -> Result<Vec<u8>> {
    let mut named: Vec<(String, &Tensor<T>)> = state.params.iter().map(|(n, t)| (n.clone(), t)).collect();
    for (prefix, map) in [(M_PREFIX, &state.optimizer.m), (V_PREFIX, &state.optimizer.v)] {
        named.extend(map.iter().map(|(n, t)| (format!("{prefix}{n}"), t)));
    }
    let mut payload = Vec::new();
    let mut tensors = Vec::with_capacity(named.len());
    for (name, t) in named {
        let offset = payload.len() as u64;
        for &v in t.data() {
            v.write_le(&mut payload);
        }
        tensors.push(TensorEntry {
            name,
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            offset,
            byte_length: payload.len() as u64 - offset,
        });
    }
    let manifest = CheckpointManifest {
        config: state.params.config().clone(),
        vocab_hash: vocab_hash.to_string(),
        step: state.optimizer.t,
        seed,
        payload_length: payload.len() as u64,
        payload_sha256: hex(&Sha256::digest(&payload)),
        tensors,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| TrainError::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + json.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses checkpoint bytes, verifying length and digest.
pub fn parse_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let fmt = |m: &str| TrainError::Format(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fmt("missing CASTCKPT magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::Format(format!("unsupported version {version}")));
    }
    let json_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let json_end = 20usize
        .checked_add(json_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| fmt("truncated manifest"))?;
    let manifest: CheckpointManifest =
        serde_json::from_slice(&bytes[20..json_end]).map_err(|e| TrainError::Format(e.to_string()))?;
    let payload = &bytes[json_end..];
    if payload.len() as u64 != manifest.payload_length {
        return Err(TrainError::Integrity(format!(
            "payload is {} bytes, manifest says {}",
            payload.len(),
            manifest.payload_length
        )));
    }
    if hex(&Sha256::digest(payload)) != manifest.payload_sha256 {
        return Err(TrainError::Integrity("payload digest mismatch".into()));
    }

    let mut params = BTreeMap::new();
    let mut m = BTreeMap::new();
    let mut v = BTreeMap::new();
    for e in &manifest.tensors {
        if e.dtype != T::DTYPE {
            return Err(TrainError::Format(format!(
                "{} is {:?}, expected {:?}",
                e.name,
                e.dtype,
                T::DTYPE
            )));
        }
        let count: usize = e.shape.iter().product();
        let (start, len) = (e.offset as usize, e.byte_length as usize);
        if len != count * e.dtype.size() || start.checked_add(len).is_none_or(|end| end > payload.len()) {
            return Err(TrainError::Integrity(format!("bad extent for {}", e.name)));
        }
        let data: Vec<T> = payload[start..start + len]
            .chunks_exact(e.dtype.size())
            .map(T::read_le)
            .collect();
        let t = Tensor::new(e.shape.clone(), data).map_err(|err| TrainError::Format(err.to_string()))?;
        if let Some(n) = e.name.strip_prefix(M_PREFIX) {
            m.insert(n.to_string(), t);
        } else if let Some(n) = e.name.strip_prefix(V_PREFIX) {
            v.insert(n.to_string(), t);
        } else {
            params.insert(e.name.clone(), t);
        }
    }
    let params = ParameterStore::from_tensors(manifest.config.clone(), params)?;
    let names: Vec<&str> = params.names().collect();
    if !m.keys().map(String::as_str).eq(names.iter().copied())
        || !v.keys().map(String::as_str).eq(names.iter().copied())
    {
        return Err(fmt("optimizer moments do not match the parameter set"));
    }
    let optimizer = OptimizerState { m, v, t: manifest.step };
    Ok(Checkpoint {
        state: TrainState { params, optimizer },
        vocab_hash: manifest.vocab_hash,
        seed: manifest.seed,
    })
}

pub fn save_checkpoint<T: Scalar>(state: &TrainState<T>, vocab_hash: &str, seed: u64, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(state, vocab_hash, seed)?;
    std::fs::write(path, bytes).map_err(|e| TrainError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| TrainError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_checkpoint(&bytes)
}
