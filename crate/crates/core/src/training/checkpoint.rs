//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "CLZMEMCK"
//! version    u32
//! header_len u64
//! header     JSON, header_len bytes
//! payload    f64 values of every tensor listed in the header, in order
//! ```
//!
//! The header holds the model and training configs, the vocabulary, the
//! shuffle RNG position, the selected epoch and its dev score, and the
//! tensor table (`name`, `shape`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::corpus::Vocabulary;
use crate::models::{MemNet, ModelConfig, ModelError};
use crate::ndcompute::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"CLZMEMCK";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {supported})")]
    Version { found: u32, supported: u32 },
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("trailing {0} bytes after checkpoint payload")]
    Trailing(usize),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("tensor `{name}`: {message}")]
    Tensor { name: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Words consumed from the ChaCha stream.
    pub word_pos: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    train_config: TrainConfig,
    vocab: Vocabulary,
    rng: RngState,
    epoch: usize,
    dev_score: f64,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub rng: RngState,
    /// 1-based epoch the parameters come from (0 before training).
    pub epoch: usize,
    pub dev_score: f64,
}

impl Checkpoint {
    pub fn new(
        model: &MemNet,
        train_config: TrainConfig,
        rng: RngState,
        epoch: usize,
        dev_score: f64,
    ) -> Self {
        Self {
            model_config: model.config().clone(),
            train_config,
            vocab: model.vocab().clone(),
            params: model.params().clone(),
            rng,
            epoch,
            dev_score,
        }
    }

    pub fn to_model(&self) -> Result<MemNet, ModelError> {
        MemNet::from_parts(
            self.model_config.clone(),
            self.vocab.clone(),
            self.params.clone(),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model_config: self.model_config.clone(),
            train_config: self.train_config.clone(),
            vocab: self.vocab.clone(),
            rng: self.rng,
            epoch: self.epoch,
            dev_score: self.dev_score,
            tensors: self
                .params
                .iter()
                .map(|(_, name, t)| TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.params.num_values());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, t) in self.params.iter() {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut cur = Reader { bytes, pos: 0 };
        if cur.take(8, "magic")? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CheckpointError::Version {
                found: version,
                supported: VERSION,
            });
        }
        let len = u64::from_le_bytes(cur.take(8, "header length")?.try_into().expect("8 bytes"));
        let header: Header = serde_json::from_slice(cur.take(len as usize, "header")?)?;
        let mut params = ParamStore::new();
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = cur.take(n * 8, &format!("tensor `{}`", entry.name))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t =
                Tensor::new(entry.shape.clone(), data).map_err(|e| CheckpointError::Tensor {
                    name: entry.name.clone(),
                    message: e.to_string(),
                })?;
            params.insert(entry.name.clone(), t);
        }
        if cur.pos != bytes.len() {
            return Err(CheckpointError::Trailing(bytes.len() - cur.pos));
        }
        Ok(Self {
            model_config: header.model_config,
            train_config: header.train_config,
            vocab: header.vocab,
            params,
            rng: header.rng,
            epoch: header.epoch,
            dev_score: header.dev_score,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                CheckpointError::Truncated(format!(
                    "{what} needs {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}
