//! Run configuration. Every hyperparameter must be present in the file;
//! nothing falls back to a built-in value at train time.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smer_core::model::{ModelConfig, PoolerKind, Task, TaskSet};
use smer_core::tokenizer::{Representation, TokenizerConfig, Vocabulary};
use smer_core::train::{default_ablation_grid, LossForm, OptimizerConfig, TrainConfig};

use crate::error::{read_string, Error, Result};

/// When set, relative output directories resolve against this root instead
/// of the config file's directory.
pub const OUTPUT_ROOT_ENV: &str = "SMER_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub manifest: PathBuf,
    pub shard_dir: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub representation: Representation,
    pub hidden_dim: usize,
    pub pooled_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub head_hidden_dim: usize,
    pub sub_embed_dim: usize,
    pub max_len: usize,
    pub pooler: PoolerKind,
    pub causal: bool,
    pub position_embedding: bool,
    pub dropout: f64,
    pub init_std: f64,
}

/// Auxiliary task switches; emotion is always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSwitches {
    pub key: bool,
    pub velocity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub max_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub seeds: Vec<u64>,
    pub loss_form: LossForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    /// `"default"`: every auxiliary combination the representation allows.
    Named(String),
    /// Explicit rows of auxiliary tasks, e.g. `[[], ["key"]]`.
    Rows(Vec<TaskSet>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSection {
    pub grid: GridSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub tokenizer: TokenizerConfig,
    pub model: ModelSection,
    pub tasks: TaskSwitches,
    pub optimizer: OptimizerSection,
    pub training: TrainingSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationSection>,
}

/// Applies `dotted.key=value` overrides to a parsed TOML document. Values
/// are read as TOML literals and fall back to bare strings.
pub fn apply_overrides(doc: &mut toml::Table, overrides: &[String]) -> Result<(), String> {
    for o in overrides {
        let (key, raw) = o.split_once('=').ok_or_else(|| format!("override {o:?} is not key=value"))?;
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let parts: Vec<&str> = key.trim().split('.').collect();
        let (last, parents) = parts.split_last().expect("split yields at least one part");
        let mut table = &mut *doc;
        for p in parents {
            table = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| format!("override {key}: {p} is not a table"))?;
        }
        table.insert(last.to_string(), value);
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, String> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        apply_overrides(&mut doc, overrides)?;
        let cfg: RunConfig = toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, overrides, validates and resolves relative paths.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = read_string(path).map_err(|e| match e {
            Error::Missing { path, .. } => Error::Missing { what: "config", path },
            e => e,
        })?;
        let mut cfg = Self::from_toml(&text, overrides).map_err(|m| Error::Validation(format!("{}: {m}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let out_root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| base.clone());
        cfg.data.manifest = join(&base, &cfg.data.manifest);
        cfg.data.shard_dir = join(&base, &cfg.data.shard_dir);
        cfg.data.output_dir = join(&out_root, &cfg.data.output_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let t = &self.tokenizer;
        if t.subdivisions_per_beat == 0 || t.max_beats_per_bar == 0 || t.max_duration == 0 {
            return Err("tokenizer values must be at least 1".into());
        }
        self.model_config().validate().map_err(|e| e.to_string())?;
        self.optimizer_config().validate().map_err(|e| e.to_string())?;
        if self.training.seeds.is_empty() {
            return Err("training.seeds must list at least one seed".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(s) = self.training.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(format!("training.seeds lists {s} twice"));
        }
        if self.ablation.is_some() {
            self.ablation_grid()?;
        }
        Ok(())
    }

    pub fn task_set(&self) -> TaskSet {
        let mut s = TaskSet::of(&[Task::Emotion]);
        if self.tasks.key {
            s = s.with(Task::Key);
        }
        if self.tasks.velocity {
            s = s.with(Task::Velocity);
        }
        s
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::build(self.model.representation, self.tokenizer)
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            representation: m.representation,
            hidden_dim: m.hidden_dim,
            pooled_dim: m.pooled_dim,
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            ffn_dim: m.ffn_dim,
            head_hidden_dim: m.head_hidden_dim,
            sub_embed_dim: m.sub_embed_dim,
            max_len: m.max_len,
            pooler: m.pooler,
            causal: m.causal,
            position_embedding: m.position_embedding,
            tasks: self.task_set(),
            dropout: m.dropout,
            init_std: m.init_std,
            vocab_sizes: self.vocabulary().field_sizes(),
        }
    }

    /// Optimizer settings with seed 0; callers set the per-run seed.
    pub fn optimizer_config(&self) -> OptimizerConfig {
        let o = &self.optimizer;
        OptimizerConfig {
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
            base_lr: o.base_lr,
            warmup_steps: o.warmup_steps,
            batch_size: o.batch_size,
            max_epochs: o.max_epochs,
            seed: 0,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { optimizer: OptimizerConfig { seed, ..self.optimizer_config() }, loss_form: self.training.loss_form }
    }

    pub fn ablation_grid(&self) -> Result<Vec<TaskSet>, String> {
        let spec = &self.ablation.as_ref().ok_or("the config has no [ablation] section")?.grid;
        let repr = self.model.representation;
        let grid = match spec {
            GridSpec::Named(n) if n == "default" => default_ablation_grid(repr),
            GridSpec::Named(n) => return Err(format!("ablation.grid: unknown grid {n:?}; use \"default\" or a list of task lists")),
            GridSpec::Rows(rows) => rows.clone(),
        };
        for row in &grid {
            if row.contains(Task::Emotion) {
                return Err("ablation.grid rows list auxiliary tasks only".into());
            }
            if row.contains(Task::Velocity) && repr.velocity_exposed() {
                return Err("ablation.grid: velocity rows need the cp representation".into());
            }
        }
        if grid.is_empty() {
            return Err("ablation.grid is empty".into());
        }
        Ok(grid)
    }
}

fn join(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
}

/// A complete config matching the built-in desk-scale model, for `smer init`
/// style scaffolding and tests.
pub fn example_config(representation: Representation) -> RunConfig {
    let tok = TokenizerConfig::default();
    let mc = ModelConfig::desk_default(representation, tok, TaskSet::of(&[Task::Emotion]));
    let o = OptimizerConfig::default();
    RunConfig {
        data: DataSection { manifest: "manifest.csv".into(), shard_dir: "shards".into(), output_dir: "runs".into() },
        tokenizer: tok,
        model: ModelSection {
            representation,
            hidden_dim: mc.hidden_dim,
            pooled_dim: mc.pooled_dim,
            n_layers: mc.n_layers,
            n_heads: mc.n_heads,
            ffn_dim: mc.ffn_dim,
            head_hidden_dim: mc.head_hidden_dim,
            sub_embed_dim: mc.sub_embed_dim,
            max_len: mc.max_len,
            pooler: mc.pooler,
            causal: mc.causal,
            position_embedding: mc.position_embedding,
            dropout: mc.dropout,
            init_std: mc.init_std,
        },
        tasks: TaskSwitches { key: true, velocity: !representation.velocity_exposed() },
        optimizer: OptimizerSection {
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
            base_lr: o.base_lr,
            warmup_steps: o.warmup_steps,
            batch_size: o.batch_size,
            max_epochs: o.max_epochs,
        },
        training: TrainingSection { seeds: (0..10).collect(), loss_form: LossForm::Linear },
        ablation: Some(AblationSection { grid: GridSpec::Named("default".into()) }),
    }
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
