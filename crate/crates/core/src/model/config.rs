use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::labeling::{EmotionClass, KeyClass, VelocityClass};
use crate::tokenizer::{Representation, TokenizerConfig, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Emotion,
    Key,
    Velocity,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Emotion, Task::Key, Task::Velocity];

    pub fn num_classes(self) -> usize {
        match self {
            Task::Emotion => EmotionClass::COUNT,
            Task::Key => KeyClass::COUNT,
            Task::Velocity => VelocityClass::COUNT,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Emotion => "emotion",
            Task::Key => "key",
            Task::Velocity => "velocity",
        }
    }

    /// Velocity is predicted per note; the others once per sequence.
    pub fn is_note_level(self) -> bool {
        self == Task::Velocity
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ModelError::InvalidConfig(format!("unknown task {s:?}")))
    }
}

/// Subset of tasks. Serialized as a list of task names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "Vec<Task>", into = "Vec<Task>")]
pub struct TaskSet {
    enabled: [bool; 3],
}

impl TaskSet {
    pub const EMOTION_ONLY: TaskSet = TaskSet { enabled: [true, false, false] };
    pub const ALL: TaskSet = TaskSet { enabled: [true, true, true] };

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn of(tasks: &[Task]) -> Self {
        let mut s = Self::empty();
        for &t in tasks {
            s.enabled[t.index()] = true;
        }
        s
    }

    pub fn contains(&self, t: Task) -> bool {
        self.enabled[t.index()]
    }

    pub fn with(mut self, t: Task) -> Self {
        self.enabled[t.index()] = true;
        self
    }

    pub fn without(mut self, t: Task) -> Self {
        self.enabled[t.index()] = false;
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = Task> + '_ {
        Task::ALL.into_iter().filter(|t| self.contains(*t))
    }

    pub fn len(&self) -> usize {
        self.enabled.iter().filter(|&&e| e).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Emotion or key: consumers of the pooled sentence representation.
    pub fn has_sequence_task(&self) -> bool {
        self.contains(Task::Emotion) || self.contains(Task::Key)
    }
}

impl From<Vec<Task>> for TaskSet {
    fn from(v: Vec<Task>) -> Self {
        Self::of(&v)
    }
}

impl From<TaskSet> for Vec<Task> {
    fn from(s: TaskSet) -> Self {
        s.iter().collect()
    }
}

impl fmt::Display for TaskSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(Task::name).collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join("+"))
        }
    }
}

/// How the sentence representation is read off the contextual sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolerKind {
    /// First unmasked position (BERT's [CLS] slot).
    First,
    /// Last unmasked position (GPT-style).
    Last,
    /// Softmax-weighted average with a learned score vector.
    Attention,
}

/// Architecture hyperparameters. Every field is required when deserialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub representation: Representation,
    /// Embedding and hidden width `E`.
    pub hidden_dim: usize,
    /// Sentence representation width `K`.
    pub pooled_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    /// Width of the hidden layer inside each task classifier.
    pub head_hidden_dim: usize,
    /// Width of each CP sub-token embedding before the projection.
    pub sub_embed_dim: usize,
    pub max_len: usize,
    pub pooler: PoolerKind,
    pub causal: bool,
    pub position_embedding: bool,
    pub tasks: TaskSet,
    pub dropout: f64,
    pub init_std: f64,
    /// Table sizes: one entry for SW, four (bar, subbeat, pitch, duration) for CP.
    pub vocab_sizes: Vec<usize>,
}

impl ModelConfig {
    /// E=K=128, four layers of four heads, 512-wide feed-forward.
    pub fn desk_default(representation: Representation, tokenizer: TokenizerConfig, tasks: TaskSet) -> Self {
        let vocab_sizes = Vocabulary::build(representation, tokenizer).field_sizes();
        Self {
            representation,
            hidden_dim: 128,
            pooled_dim: 128,
            n_layers: 4,
            n_heads: 4,
            ffn_dim: 512,
            head_hidden_dim: 128,
            sub_embed_dim: 128,
            max_len: 512,
            pooler: PoolerKind::Attention,
            causal: false,
            position_embedding: true,
            tasks,
            dropout: 0.1,
            init_std: 0.02,
            vocab_sizes,
        }
    }

    /// A two-layer, 32-wide network for smoke tests and toy corpora. Weights
    /// start at std `1/sqrt(32)`; at this width 0.02 leaves the head stack
    /// with almost no gain and training stalls.
    pub fn tiny(representation: Representation, tokenizer: TokenizerConfig, tasks: TaskSet) -> Self {
        Self {
            hidden_dim: 32,
            pooled_dim: 32,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 64,
            head_hidden_dim: 32,
            sub_embed_dim: 16,
            max_len: 64,
            dropout: 0.0,
            init_std: 1.0 / libm::sqrt(32.0),
            ..Self::desk_default(representation, tokenizer, tasks)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.hidden_dim == 0 || self.n_heads == 0 || self.hidden_dim % self.n_heads != 0 {
            return bad(format!("hidden_dim {} must be a positive multiple of n_heads {}", self.hidden_dim, self.n_heads));
        }
        if self.pooled_dim == 0 || self.head_hidden_dim == 0 || self.max_len == 0 {
            return bad("pooled_dim, head_hidden_dim and max_len must be at least 1".into());
        }
        if self.n_layers > 0 && self.ffn_dim == 0 {
            return bad("ffn_dim must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return bad(format!("init_std {} must be finite and non-negative", self.init_std));
        }
        if self.tasks.is_empty() {
            return bad("at least one task must be enabled".into());
        }
        if self.tasks.contains(Task::Velocity) && self.representation.velocity_exposed() {
            return bad("the velocity task needs the compound-word representation; single-word tokens already carry velocity".into());
        }
        let fields = match self.representation {
            Representation::Cp => 4,
            Representation::Sw => 1,
        };
        if self.vocab_sizes.len() != fields || self.vocab_sizes.iter().any(|&v| v < 2) {
            return bad(format!("expected {fields} vocabulary sizes of at least 2, got {:?}", self.vocab_sizes));
        }
        if self.representation == Representation::Cp && self.sub_embed_dim == 0 {
            return bad("sub_embed_dim must be at least 1".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }
}
