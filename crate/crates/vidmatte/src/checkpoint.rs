//! Checkpoint archive: an 8-byte magic, a little-endian `u64` header length,
//! a JSON header naming every array with its shape and byte offset, then the
//! arrays as little-endian `f32`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vidmatte_core::nn::ParamStore;
use vidmatte_core::optim::Adam;
use vidmatte_core::tensor::Tensor;
use vidmatte_core::trainer::{Checkpoint, TrainConfig};

use crate::config::config_from_entries;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VMCKPT\x00\x01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Param,
    AdamM,
    AdamV,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub role: Role,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the data section.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: u32,
    pub config: Vec<(String, String)>,
    pub step: usize,
    /// Decimal string; JSON numbers cannot hold a `u128`.
    pub rng_word_pos: String,
    pub last_loss: Option<f64>,
    pub optimizer: OptimizerState,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let mut push = |name: &str, role: Role, t: &Tensor<f32>| {
        tensors.push(TensorEntry { name: name.to_string(), role, shape: t.shape().to_vec(), dtype: "f32".into(), offset: data.len() });
        for v in t.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, t) in ck.params.iter() {
        push(name, Role::Param, t);
    }
    for (role, moments) in [(Role::AdamM, &ck.optimizer.m), (Role::AdamV, &ck.optimizer.v)] {
        for ((name, _), t) in ck.params.iter().zip(moments) {
            push(name, role, t);
        }
    }
    let header = Header {
        format: 1,
        config: ck.config.entries(),
        step: ck.step,
        rng_word_pos: ck.rng_word_pos.to_string(),
        last_loss: ck.last_loss.is_finite().then_some(ck.last_loss),
        optimizer: OptimizerState { beta1: ck.optimizer.beta1, beta2: ck.optimizer.beta2, eps: ck.optimizer.eps, step: ck.optimizer.step },
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Usage(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |msg: String| Error::format(path, msg);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[16..header_end]).map_err(|e| bad(e.to_string()))?;
    if header.format != 1 {
        return Err(bad(format!("unsupported checkpoint format {}", header.format)));
    }
    let data = &bytes[header_end..];
    let config = config_from_entries(&header.config)?;
    let mut params = ParamStore::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for e in &header.tensors {
        if e.dtype != "f32" {
            return Err(bad(format!("tensor `{}` has unsupported dtype {}", e.name, e.dtype)));
        }
        let count: usize = e.shape.iter().product();
        let end = e.offset.checked_add(4 * count).filter(|&end| end <= data.len()).ok_or_else(|| bad(format!("tensor `{}` overruns the file", e.name)))?;
        let values = data[e.offset..end].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        let t = Tensor::from_vec(&e.shape, values)?;
        match e.role {
            Role::Param => {
                if params.find(&e.name).is_some() {
                    return Err(bad(format!("duplicate parameter `{}`", e.name)));
                }
                params.add(e.name.clone(), t);
            }
            Role::AdamM => m.push((e.name.clone(), t)),
            Role::AdamV => v.push((e.name.clone(), t)),
        }
    }
    let moments = |list: Vec<(String, Tensor<f32>)>, kind: &str| -> Result<Vec<Tensor<f32>>> {
        if list.len() != params.len() {
            return Err(bad(format!("{} {kind} moments for {} parameters", list.len(), params.len())));
        }
        list.into_iter()
            .zip(params.iter())
            .map(|((n, t), (pn, pt))| {
                if n != pn || t.shape() != pt.shape() {
                    Err(bad(format!("{kind} moment `{n}` does not match parameter `{pn}`")))
                } else {
                    Ok(t)
                }
            })
            .collect()
    };
    let m = moments(m, "first")?;
    let v = moments(v, "second")?;
    let o = &header.optimizer;
    let optimizer = Adam { beta1: o.beta1, beta2: o.beta2, eps: o.eps, step: o.step, m, v };
    let rng_word_pos = header.rng_word_pos.parse().map_err(|_| bad("invalid rng position".into()))?;
    Ok(Checkpoint { config, params, optimizer, step: header.step, rng_word_pos, last_loss: header.last_loss.unwrap_or(f64::NAN) })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = encode(ck)?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Configuration stored in a checkpoint without decoding its arrays.
pub fn read_config(path: &Path) -> Result<TrainConfig> {
    Ok(load(path)?.config)
}
