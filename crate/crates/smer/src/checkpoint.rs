//! Binary model checkpoints.
//!
//! Layout (little-endian):
//! `SMERCKPT`, u32 version, u32-prefixed TOML metadata (`[model]`, `[tokenizer]`),
//! u64 seed, u32 tensor count, then per tensor a u16-prefixed name, u8 rank,
//! u32 dims and raw f32 data, and finally u8 count of (u8 task, f64 σ) pairs.
//! The σ values are redundant with the stored log-σ tensors and are checked
//! against them on load.

use std::path::Path;

use serde::{Deserialize, Serialize};
use smer_core::model::{Model, ModelConfig, ParameterStore, Task, Tensor};
use smer_core::tokenizer::TokenizerConfig;
use smer_core::train::sigmas;

use crate::bin::{Reader, Writer};
use crate::error::{read, write_atomic, Error, Result};

pub const MAGIC: &[u8; 8] = b"SMERCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub tokenizer: TokenizerConfig,
    /// Seed of the run that produced the weights.
    pub seed: u64,
    pub params: ParameterStore,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    model: ModelConfig,
    tokenizer: TokenizerConfig,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>, String> {
        let meta = toml::to_string(&Meta { model: self.model.clone(), tokenizer: self.tokenizer })
            .map_err(|e| format!("metadata: {e}"))?;
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.long_str(&meta);
        w.u64(self.seed);
        w.u32(self.params.len() as u32);
        for t in self.params.tensors() {
            w.short_str(&t.name)?;
            let rank = u8::try_from(t.shape.len()).map_err(|_| format!("{}: rank too large", t.name))?;
            w.u8(rank);
            for &d in &t.shape {
                w.u32(u32::try_from(d).map_err(|_| format!("{}: dimension too large", t.name))?);
            }
            for &x in &t.data {
                w.f32(x);
            }
        }
        let model = Model::new(self.model.clone()).map_err(|e| e.to_string())?;
        let sig = sigmas(&model, &self.params.weights());
        let pairs: Vec<_> = sig.iter().collect();
        w.u8(pairs.len() as u8);
        for (task, s) in pairs {
            w.u8(task_code(task));
            w.f64(s);
        }
        Ok(w.0)
    }

    /// Parses and validates: the tensor layout must match the stored model
    /// config and the σ section must agree with the log-σ tensors.
    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        let mut r = Reader::new(bytes);
        r.expect_magic(MAGIC, "checkpoint")?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version} (expected {VERSION})"));
        }
        let meta: Meta = toml::from_str(&r.long_str()?).map_err(|e| format!("metadata: {e}"))?;
        let seed = r.u64()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = r.short_str()?;
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n.min(1 << 24));
            for _ in 0..n {
                data.push(r.f32()?);
            }
            tensors.push(Tensor { name, shape, data });
        }
        let pairs = r.u8()? as usize;
        let mut stored = Vec::with_capacity(pairs);
        for _ in 0..pairs {
            let at = r.offset();
            let task = task_from_code(r.u8()?).ok_or_else(|| format!("unknown task code at byte {at}"))?;
            stored.push((task, r.f64()?));
        }
        if !r.at_end() {
            return Err(format!("trailing bytes after offset {}", r.offset()));
        }
        let ckpt = Checkpoint { model: meta.model, tokenizer: meta.tokenizer, seed, params: ParameterStore::from_tensors(tensors) };
        let model = ckpt.build_model().map_err(|e| e.to_string())?;
        let expected: Vec<_> = sigmas(&model, &ckpt.params.weights()).iter().collect();
        if expected.len() != stored.len()
            || expected.iter().zip(&stored).any(|(a, b)| a.0 != b.0 || a.1.to_bits() != b.1.to_bits())
        {
            return Err("σ section disagrees with the log-σ tensors".into());
        }
        Ok(ckpt)
    }

    /// Rebuilds the model and checks the stored tensors fit it.
    pub fn build_model(&self) -> Result<Model, smer_core::model::ModelError> {
        let model = Model::new(self.model.clone())?;
        model.check_layout(&self.params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode().map_err(|m| Error::format(path, m))?;
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read(path).map_err(|e| match e {
            Error::Missing { path, .. } => Error::Missing { what: "checkpoint", path },
            e => e,
        })?;
        Self::decode(&bytes).map_err(|m| Error::format(path, m))
    }
}

fn task_code(task: Task) -> u8 {
    Task::ALL.iter().position(|&t| t == task).expect("listed") as u8
}

fn task_from_code(code: u8) -> Option<Task> {
    Task::ALL.get(code as usize).copied()
}
