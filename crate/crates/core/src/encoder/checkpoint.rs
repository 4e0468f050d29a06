//! Binary checkpoint: an 8-byte magic, a little-endian `u32` format version,
//! a `u64` header length, a JSON header describing the configuration and
//! every tensor, then the tensor payloads as little-endian `f64` in header
//! order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use super::model::EncoderModel;
use crate::error::{Result, SluError};
use crate::numerics::{ParamId, ParamStore, Tensor2};

pub use crate::data::CmvnStats;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SLUCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: EncoderModel,
    pub cmvn: Option<CmvnStats>,
    /// Free-form provenance (training mode, split, seed, ...).
    pub meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    blank_index: usize,
    frozen_layers: Vec<bool>,
    tensors: Vec<TensorEntry>,
    has_cmvn: bool,
    meta: BTreeMap<String, String>,
}

fn write_tensor(out: &mut Vec<u8>, t: &Tensor2) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let model = &self.model;
        let mut tensors: Vec<(String, &Tensor2)> = model
            .param_ids()
            .into_iter()
            .map(|id| (model.param_name(id), model.param(id)))
            .collect();
        if let Some(c) = &self.cmvn {
            tensors.push(("cmvn.mean".into(), &c.mean));
            tensors.push(("cmvn.std".into(), &c.std));
        }
        let header = Header {
            config: model.config.clone(),
            blank_index: model.config.blank_index(),
            frozen_layers: model.frozen.clone(),
            tensors: tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    rows: t.rows(),
                    cols: t.cols(),
                })
                .collect(),
            has_cmvn: self.cmvn.is_some(),
            meta: self.meta.clone(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| SluError::Data(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &tensors {
            write_tensor(&mut out, t);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: String| SluError::format(origin, msg);
        let mut cur = bytes;
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic).map_err(|_| bad("truncated magic".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let mut word = [0u8; 4];
        cur.read_exact(&mut word).map_err(|_| bad("truncated version".into()))?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(SluError::Version {
                expected: CHECKPOINT_VERSION.to_string(),
                found: version.to_string(),
            });
        }
        let mut len = [0u8; 8];
        cur.read_exact(&mut len).map_err(|_| bad("truncated header length".into()))?;
        let len = u64::from_le_bytes(len) as usize;
        if cur.len() < len {
            return Err(bad("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&cur[..len]).map_err(|e| bad(format!("header: {e}")))?;
        cur = &cur[len..];

        header.config.validate()?;
        if header.blank_index != header.config.blank_index() {
            return Err(bad(format!(
                "blank index {} does not match vocabulary size {}",
                header.blank_index, header.config.vocab_size
            )));
        }
        let mut model = EncoderModel::zeros(header.config.clone())?;
        if header.frozen_layers.len() != model.layers.len() {
            return Err(bad("frozen-layer marker length mismatch".into()));
        }
        model.frozen = header.frozen_layers.clone();

        let mut read_tensor = |e: &TensorEntry| -> Result<Tensor2> {
            let n = e.rows * e.cols;
            if cur.len() < n * 8 {
                return Err(bad(format!("truncated tensor {}", e.name)));
            }
            let data = cur[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            cur = &cur[n * 8..];
            Tensor2::from_vec(e.rows, e.cols, data)
        };

        let n_params = model.param_count();
        let expected_entries = n_params + if header.has_cmvn { 2 } else { 0 };
        if header.tensors.len() != expected_entries {
            return Err(bad(format!(
                "expected {expected_entries} tensors, header lists {}",
                header.tensors.len()
            )));
        }
        for (i, entry) in header.tensors[..n_params].iter().enumerate() {
            let id = ParamId(i);
            if entry.name != model.param_name(id) {
                return Err(bad(format!("tensor {i} is {}, expected {}", entry.name, model.param_name(id))));
            }
            if (entry.rows, entry.cols) != model.param(id).shape() {
                return Err(bad(format!("tensor {} has shape {:?}", entry.name, (entry.rows, entry.cols))));
            }
            *model.param_mut(id) = read_tensor(entry)?;
        }
        let cmvn = if header.has_cmvn {
            let mean = read_tensor(&header.tensors[n_params])?;
            let std = read_tensor(&header.tensors[n_params + 1])?;
            Some(CmvnStats { mean, std })
        } else {
            None
        };
        if !cur.is_empty() {
            return Err(bad(format!("{} trailing bytes", cur.len())));
        }
        Ok(Self {
            model,
            cmvn,
            meta: header.meta,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let mut f = std::fs::File::create(path).map_err(|e| SluError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| SluError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| SluError::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}
