//! Single-file checkpoints.
//!
//! Layout: the 8-byte magic `GCCCKPT1`, a little-endian `u64` manifest
//! length, the UTF-8 JSON manifest, the tensor payloads in manifest order
//! (little-endian), and a CRC32 of every preceding byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contrast::{EncoderPair, MocoQueue};
use crate::gin::GinParams;
use crate::optim::AdamState;
use crate::tensor::Tensor;
use crate::trainer::{PretrainConfig, Trainer};

pub const MAGIC: &[u8; 8] = b"GCCCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorDescriptor {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    pub write_ptr: usize,
    pub filled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: PretrainConfig,
    pub step: u64,
    pub adam_step: u64,
    /// Every random stream is derived from this seed and the step counter.
    pub rng_seed: u64,
    pub queue: Option<QueueState>,
    pub tensors: Vec<TensorDescriptor>,
}

fn dtype_width(dtype: &str) -> Option<usize> {
    match dtype {
        "f32" => Some(4),
        "f64" => Some(8),
        _ => None,
    }
}

fn named_tensors(t: &Trainer) -> Vec<(String, &Tensor)> {
    let names = t.pair.query.names();
    let mut out = Vec::new();
    for (prefix, params) in [("query", &t.pair.query), ("key", &t.pair.key)] {
        for (n, tensor) in names.iter().zip(&params.tensors) {
            out.push((format!("{prefix}.{n}"), tensor));
        }
    }
    for (prefix, moments) in [("adam.m", &t.adam.first_moment), ("adam.v", &t.adam.second_moment)] {
        for (n, tensor) in names.iter().zip(moments) {
            out.push((format!("{prefix}.{n}"), tensor));
        }
    }
    if let Some(q) = &t.queue {
        out.push(("queue".into(), q.storage()));
    }
    out
}

/// Serializes the full training state.
pub fn to_bytes(t: &Trainer) -> Vec<u8> {
    let tensors = named_tensors(t);
    let manifest = Manifest {
        version: FORMAT_VERSION,
        config: t.config,
        step: t.step,
        adam_step: t.adam.step_count,
        rng_seed: t.config.seed,
        queue: t.queue.as_ref().map(|q| QueueState {
            write_ptr: q.write_ptr(),
            filled: q.filled(),
        }),
        tensors: tensors
            .iter()
            .map(|(name, tensor)| TensorDescriptor {
                name: name.clone(),
                shape: vec![tensor.rows(), tensor.cols()],
                dtype: "f64".into(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, tensor) in &tensors {
        for x in tensor.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(msg.into())
}

/// Reads and validates just the manifest.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, usize), CheckpointError> {
    if bytes.len() < MAGIC.len() + 8 + 4 {
        return Err(corrupt("file too short"));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(corrupt("checksum mismatch"));
    }
    let len = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
    let start: usize = 16;
    let end = start.checked_add(len).filter(|&e| e <= body.len()).ok_or_else(|| corrupt("manifest length"))?;
    #[derive(Deserialize)]
    struct VersionOnly {
        version: u32,
    }
    let v: VersionOnly =
        serde_json::from_slice(&body[start..end]).map_err(|e| corrupt(format!("manifest: {e}")))?;
    if v.version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: v.version,
            expected: FORMAT_VERSION,
        });
    }
    let manifest: Manifest =
        serde_json::from_slice(&body[start..end]).map_err(|e| corrupt(format!("manifest: {e}")))?;
    Ok((manifest, end))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Trainer, CheckpointError> {
    let (manifest, mut offset) = read_manifest(bytes)?;
    let body = &bytes[..bytes.len() - 4];
    let mut tensors = std::collections::HashMap::new();
    for desc in &manifest.tensors {
        let width = dtype_width(&desc.dtype).ok_or_else(|| corrupt(format!("unknown dtype {}", desc.dtype)))?;
        let [rows, cols] = desc.shape[..] else {
            return Err(corrupt(format!("tensor {} has rank {}", desc.name, desc.shape.len())));
        };
        let count = rows.checked_mul(cols).ok_or_else(|| corrupt("tensor size overflow"))?;
        let end = count
            .checked_mul(width)
            .and_then(|n| offset.checked_add(n))
            .filter(|&e| e <= body.len())
            .ok_or_else(|| corrupt(format!("payload for {} truncated", desc.name)))?;
        let data: Vec<f64> = body[offset..end]
            .chunks_exact(width)
            .map(|c| match width {
                4 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
                _ => f64::from_le_bytes(c.try_into().expect("8 bytes")),
            })
            .collect();
        offset = end;
        tensors.insert(desc.name.clone(), Tensor::from_vec(rows, cols, data));
    }
    if offset != body.len() {
        return Err(corrupt("trailing bytes after payload"));
    }

    let config = manifest.config;
    let shapes = config.gin.parameter_shapes();
    let mut take = |name: String, rows: usize, cols: usize| -> Result<Tensor, CheckpointError> {
        let t = tensors.remove(&name).ok_or_else(|| corrupt(format!("missing tensor {name}")))?;
        if t.shape() != (rows, cols) {
            return Err(corrupt(format!("tensor {name} has shape {:?}, expected {:?}", t.shape(), (rows, cols))));
        }
        Ok(t)
    };
    let mut group = |prefix: &str| -> Result<Vec<Tensor>, CheckpointError> {
        shapes
            .iter()
            .map(|(n, r, c)| take(format!("{prefix}.{n}"), *r, *c))
            .collect()
    };
    let query = group("query")?;
    let key = group("key")?;
    let first_moment = group("adam.m")?;
    let second_moment = group("adam.v")?;
    let queue = match &manifest.queue {
        Some(state) => {
            let storage = take("queue".into(), config.contrast.dictionary_size, config.gin.out_dim)?;
            Some(MocoQueue::from_parts(storage, state.write_ptr, state.filled).map_err(|e| corrupt(e.to_string()))?)
        }
        None => None,
    };
    Ok(Trainer {
        config,
        pair: EncoderPair {
            query: GinParams {
                config: config.gin,
                tensors: query,
            },
            key: GinParams {
                config: config.gin,
                tensors: key,
            },
        },
        adam: AdamState {
            first_moment,
            second_moment,
            step_count: manifest.adam_step,
        },
        queue,
        step: manifest.step,
    })
}

/// Writes atomically: the bytes go to a sibling temporary file that is then
/// renamed over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(io_err)?;
    f.write_all(bytes).map_err(io_err)?;
    f.sync_all().map_err(io_err)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn save_checkpoint(t: &Trainer, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    write_atomic(path.as_ref(), &to_bytes(t))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Trainer, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}

/// CRC32 over the little-endian bytes of a parameter set.
pub fn params_checksum(params: &GinParams) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for t in &params.tensors {
        for x in t.data() {
            h.update(&x.to_le_bytes());
        }
    }
    h.finalize()
}

/// CRC32 over the optimizer moments and step counter.
pub fn adam_checksum(state: &AdamState) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&state.step_count.to_le_bytes());
    for t in state.first_moment.iter().chain(&state.second_moment) {
        for x in t.data() {
            h.update(&x.to_le_bytes());
        }
    }
    h.finalize()
}
