//! The trainable network: token embedding, a pre-norm transformer encoder,
//! a pooler, and one two-layer classifier per task.
//!
//! Forward passes record a [`Trace`]; [`Model::backward`] walks it in reverse
//! and accumulates exact gradients into a [`Gradients`] buffer.

mod config;
mod ops;
mod params;

pub use config::{ModelConfig, PoolerKind, Task, TaskSet};
pub use ops::{log_sum_exp, softmax};
pub use params::{Gradients, ParamId, ParameterStore, Tensor, Weights};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use ops::{axpy, dot, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, softmax_backward, LayerNormCache};
use crate::tokenizer::{Representation, TokenSequence, Tokens};

/// RNG used for initialization, shuffling and dropout.
pub type TrainRng = rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("model expects {expected:?} tokens, got {found:?}")]
    RepresentationMismatch { expected: Representation, found: Representation },
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("attention mask length {mask} differs from token length {len}")]
    MaskLength { mask: usize, len: usize },
    #[error("position {position}: id {id} out of range for {field} table of size {size}")]
    OutOfVocabulary { position: usize, field: usize, id: u32, size: usize },
    #[error("task {0} is not enabled")]
    TaskDisabled(Task),
    #[error("every position is masked")]
    AllMasked,
    #[error("parameter layout does not match the model: {0}")]
    LayoutMismatch(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// What a tensor belongs to; decides whether it trains and decays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Backbone,
    Pooler,
    Head(Task),
    LogSigma(Task),
}

/// Optimizer treatment of one tensor under a given config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamPolicy {
    pub trainable: bool,
    pub weight_decay: bool,
}

#[derive(Debug, Clone)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
    role: ParamRole,
    decay: bool,
}

#[derive(Debug, Clone)]
struct LayerIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct HeadIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    in_dim: usize,
    classes: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    tables: Vec<ParamId>,
    cp_proj: Option<(ParamId, ParamId)>,
    position: Option<ParamId>,
    layers: Vec<LayerIds>,
    pool_score: Option<ParamId>,
    pool_w: ParamId,
    pool_b: ParamId,
    heads: [Option<HeadIds>; 3],
    log_sigma: [Option<ParamId>; 3],
}

struct LayoutBuilder {
    specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: &[usize], init: Init, role: ParamRole, decay: bool) -> ParamId {
        self.specs.push(ParamSpec { name, shape: shape.to_vec(), init, role, decay });
        ParamId(self.specs.len() - 1)
    }

    fn weight(&mut self, name: String, shape: &[usize], role: ParamRole) -> ParamId {
        self.add(name, shape, Init::Normal, role, true)
    }

    fn bias(&mut self, name: String, len: usize, role: ParamRole) -> ParamId {
        self.add(name, &[len], Init::Zeros, role, false)
    }
}

/// Gradients flowing into the model's outputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputGrads {
    pub emotion: Option<Vec<f64>>,
    pub key: Option<Vec<f64>>,
    /// Row-major `real_positions × 6`.
    pub velocity: Option<Vec<f64>>,
}

/// Everything a forward pass produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub hidden_dim: usize,
    /// Number of rows in `l2`.
    pub rows: usize,
    /// Contextual representations, `rows × hidden_dim`.
    pub l2: Vec<f64>,
    /// Sentence representation, present when emotion or key is enabled.
    pub l3: Option<Vec<f64>>,
    pub logits_emotion: Option<Vec<f64>>,
    pub logits_key: Option<Vec<f64>>,
    /// One row of six logits per real (unmasked) position.
    pub logits_velocity: Option<Vec<Vec<f64>>>,
}

impl ForwardOutput {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.l2[i * self.hidden_dim..(i + 1) * self.hidden_dim]
    }

    /// Sequence-level logits for emotion or key.
    pub fn logits(&self, task: Task) -> Option<&[f64]> {
        match task {
            Task::Emotion => self.logits_emotion.as_deref(),
            Task::Key => self.logits_key.as_deref(),
            Task::Velocity => None,
        }
    }
}

struct EmbedTrace {
    concat: Option<Vec<f64>>,
    drop: Option<Vec<f64>>,
}

struct LayerTrace {
    ln1: LayerNormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    drop_attn: Option<Vec<f64>>,
    x_mid: Vec<f64>,
    ln2: LayerNormCache,
    b: Vec<f64>,
    u: Vec<f64>,
    f: Vec<f64>,
    drop_ffn: Option<Vec<f64>>,
}

enum PoolSelect {
    Index(usize),
    Weighted(Vec<f64>),
}

struct PoolTrace {
    select: PoolSelect,
    v: Vec<f64>,
    z: Vec<f64>,
}

struct HeadTrace {
    x: Vec<f64>,
    u1: Vec<f64>,
    r: Vec<f64>,
    rows: usize,
}

/// Intermediate values of one forward pass, consumed by [`Model::backward`].
pub struct Trace {
    rows: usize,
    real_rows: Vec<usize>,
    ids: Vec<[u32; 4]>,
    embed: EmbedTrace,
    layers: Vec<LayerTrace>,
    l2: Vec<f64>,
    pool: Option<PoolTrace>,
    heads: [Option<HeadTrace>; 3],
}

impl Trace {
    /// Fingerprint of every classifier ReLU's on/off state. Finite-difference
    /// probes whose two sides disagree here straddle a kink.
    pub fn activation_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for head in self.heads.iter().flatten() {
            for &u in &head.u1 {
                h ^= u64::from(u > 0.0);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Number of unmasked positions.
    pub fn real_positions(&self) -> usize {
        self.real_rows.len()
    }
}

fn dropout_mask(rng: Option<&mut TrainRng>, p: f64, len: usize) -> Option<Vec<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some((0..len).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect())
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (a, b) in x.iter_mut().zip(m) {
            *a *= b;
        }
    }
}

pub struct Model {
    config: ModelConfig,
    specs: Vec<ParamSpec>,
    layout: Layout,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let e = config.hidden_dim;
        let mut b = LayoutBuilder { specs: Vec::new() };
        let bb = ParamRole::Backbone;

        let (tables, cp_proj) = match config.representation {
            Representation::Sw => (vec![b.weight("embed.token".into(), &[config.vocab_sizes[0], e], bb)], None),
            Representation::Cp => {
                let d = config.sub_embed_dim;
                let tables = ["bar", "subbeat", "pitch", "duration"]
                    .iter()
                    .zip(&config.vocab_sizes)
                    .map(|(name, &size)| b.weight(format!("embed.{name}"), &[size, d], bb))
                    .collect();
                let w = b.weight("embed.proj.weight".into(), &[e, 4 * d], bb);
                let bias = b.bias("embed.proj.bias".into(), e, bb);
                (tables, Some((w, bias)))
            }
        };
        let position = config.position_embedding.then(|| b.weight("embed.position".into(), &[config.max_len, e], bb));

        let f = config.ffn_dim;
        let layers = (0..config.n_layers)
            .map(|l| {
                let p = |s: &str| format!("layers.{l}.{s}");
                LayerIds {
                    ln1_g: b.add(p("ln1.gamma"), &[e], Init::Ones, bb, false),
                    ln1_b: b.bias(p("ln1.beta"), e, bb),
                    wq: b.weight(p("attn.q.weight"), &[e, e], bb),
                    bq: b.bias(p("attn.q.bias"), e, bb),
                    wk: b.weight(p("attn.k.weight"), &[e, e], bb),
                    bk: b.bias(p("attn.k.bias"), e, bb),
                    wv: b.weight(p("attn.v.weight"), &[e, e], bb),
                    bv: b.bias(p("attn.v.bias"), e, bb),
                    wo: b.weight(p("attn.out.weight"), &[e, e], bb),
                    bo: b.bias(p("attn.out.bias"), e, bb),
                    ln2_g: b.add(p("ln2.gamma"), &[e], Init::Ones, bb, false),
                    ln2_b: b.bias(p("ln2.beta"), e, bb),
                    w1: b.weight(p("ffn.in.weight"), &[f, e], bb),
                    b1: b.bias(p("ffn.in.bias"), f, bb),
                    w2: b.weight(p("ffn.out.weight"), &[e, f], bb),
                    b2: b.bias(p("ffn.out.bias"), e, bb),
                }
            })
            .collect();

        let pr = ParamRole::Pooler;
        let pool_score = (config.pooler == PoolerKind::Attention).then(|| b.weight("pooler.score".into(), &[e], pr));
        let pool_w = b.weight("pooler.proj.weight".into(), &[config.pooled_dim, e], pr);
        let pool_b = b.bias("pooler.proj.bias".into(), config.pooled_dim, pr);

        let mut heads = [None; 3];
        let mut log_sigma = [None; 3];
        for task in Task::ALL {
            if task == Task::Velocity && config.representation.velocity_exposed() {
                continue;
            }
            let in_dim = if task.is_note_level() { e } else { config.pooled_dim };
            let h = config.head_hidden_dim;
            let c = task.num_classes();
            let role = ParamRole::Head(task);
            let n = task.name();
            heads[task.index()] = Some(HeadIds {
                w1: b.weight(format!("head.{n}.fc1.weight"), &[h, in_dim], role),
                b1: b.bias(format!("head.{n}.fc1.bias"), h, role),
                w2: b.weight(format!("head.{n}.fc2.weight"), &[c, h], role),
                b2: b.bias(format!("head.{n}.fc2.bias"), c, role),
                in_dim,
                classes: c,
            });
        }
        for task in Task::ALL {
            if heads[task.index()].is_some() {
                log_sigma[task.index()] =
                    Some(b.add(format!("mtl.log_sigma.{}", task.name()), &[1], Init::Zeros, ParamRole::LogSigma(task), false));
            }
        }

        let layout = Layout { tables, cp_proj, position, layers, pool_score, pool_w, pool_b, heads, log_sigma };
        Ok(Self { config, specs: b.specs, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Seeded initialization: N(0, init_std) for weights and embeddings, zeros
    /// for biases and log-sigmas, ones for layer-norm gains.
    pub fn init(&self, seed: u64) -> ParameterStore {
        let mut rng = TrainRng::seed_from_u64(seed);
        let normal = Normal::new(0.0, self.config.init_std).expect("validated init_std");
        let mut store = ParameterStore::new();
        for spec in &self.specs {
            let n: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Normal => (0..n).map(|_| normal.sample(&mut rng) as f32).collect(),
            };
            store.push(spec.name.clone(), spec.shape.clone(), data);
        }
        store
    }

    /// Checks that a store (e.g. loaded from disk) has exactly this model's
    /// tensor names and shapes.
    pub fn check_layout(&self, store: &ParameterStore) -> Result<(), ModelError> {
        if store.len() != self.specs.len() {
            return Err(ModelError::LayoutMismatch(format!("expected {} tensors, found {}", self.specs.len(), store.len())));
        }
        for (spec, t) in self.specs.iter().zip(store.tensors()) {
            if spec.name != t.name || spec.shape != t.shape || t.data.len() != t.numel() {
                return Err(ModelError::LayoutMismatch(format!(
                    "expected {} {:?}, found {} {:?}",
                    spec.name, spec.shape, t.name, t.shape
                )));
            }
        }
        Ok(())
    }

    pub fn param_role(&self, id: ParamId) -> ParamRole {
        self.specs[id.0].role
    }

    /// Per-tensor optimizer policy. Tensors serving disabled tasks are frozen;
    /// biases, layer-norm parameters and log-sigmas never decay.
    pub fn param_policies(&self) -> Vec<ParamPolicy> {
        let tasks = self.config.tasks;
        self.specs
            .iter()
            .map(|s| {
                let trainable = match s.role {
                    ParamRole::Backbone => true,
                    ParamRole::Pooler => tasks.has_sequence_task(),
                    ParamRole::Head(t) | ParamRole::LogSigma(t) => tasks.contains(t),
                };
                ParamPolicy { trainable, weight_decay: s.decay }
            })
            .collect()
    }

    pub fn log_sigma_id(&self, task: Task) -> Option<ParamId> {
        self.layout.log_sigma[task.index()]
    }

    /// Ids of the tensors making up one task classifier.
    pub fn head_param_ids(&self, task: Task) -> Vec<ParamId> {
        self.layout.heads[task.index()].map_or_else(Vec::new, |h| vec![h.w1, h.b1, h.w2, h.b2])
    }

    fn validate_tokens(&self, tokens: &TokenSequence) -> Result<Vec<[u32; 4]>, ModelError> {
        let found = tokens.representation();
        if found != self.config.representation {
            return Err(ModelError::RepresentationMismatch { expected: self.config.representation, found });
        }
        let len = tokens.len();
        if len > self.config.max_len {
            return Err(ModelError::SequenceTooLong { len, max_len: self.config.max_len });
        }
        if tokens.attention_mask.len() != len {
            return Err(ModelError::MaskLength { mask: tokens.attention_mask.len(), len });
        }
        let ids: Vec<[u32; 4]> = match &tokens.tokens {
            Tokens::Sw(t) => t.iter().map(|&id| [id, 0, 0, 0]).collect(),
            Tokens::Cp(t) => t.iter().map(|s| s.fields()).collect(),
        };
        for (position, row) in ids.iter().enumerate() {
            for (field, &size) in self.config.vocab_sizes.iter().enumerate() {
                if row[field] as usize >= size {
                    return Err(ModelError::OutOfVocabulary { position, field, id: row[field], size });
                }
            }
        }
        Ok(ids)
    }

    fn embed_rows(&self, w: &Weights, ids: &[[u32; 4]], rows: usize) -> (Vec<f64>, Option<Vec<f64>>) {
        let e = self.config.hidden_dim;
        let (mut x, concat) = match self.config.representation {
            Representation::Sw => {
                let table = &w[self.layout.tables[0]];
                let mut x = vec![0.0; rows * e];
                for i in 0..rows {
                    let id = ids[i][0] as usize;
                    x[i * e..(i + 1) * e].copy_from_slice(&table[id * e..(id + 1) * e]);
                }
                (x, None)
            }
            Representation::Cp => {
                let d = self.config.sub_embed_dim;
                let mut c = vec![0.0; rows * 4 * d];
                for i in 0..rows {
                    for f in 0..4 {
                        let table = &w[self.layout.tables[f]];
                        let id = ids[i][f] as usize;
                        c[(i * 4 + f) * d..(i * 4 + f + 1) * d].copy_from_slice(&table[id * d..(id + 1) * d]);
                    }
                }
                let (pw, pb) = self.layout.cp_proj.expect("cp projection");
                (linear(&c, rows, &w[pw], Some(&w[pb]), e), Some(c))
            }
        };
        if let Some(pos) = self.layout.position {
            axpy(1.0, &w[pos][..rows * e], &mut x);
        }
        (x, concat)
    }

    /// Token plus position embedding for every position, `len × hidden_dim`.
    pub fn embed(&self, w: &Weights, tokens: &TokenSequence) -> Result<Vec<f64>, ModelError> {
        let ids = self.validate_tokens(tokens)?;
        Ok(self.embed_rows(w, &ids, ids.len()).0)
    }

    fn key_valid(&self, mask: &[u8], rows: usize, i: usize, j: usize) -> bool {
        j < rows && mask[j] != 0 && (!self.config.causal || j <= i)
    }

    fn layer_forward(
        &self,
        w: &Weights,
        ids: &LayerIds,
        x_in: Vec<f64>,
        mask: &[u8],
        rows: usize,
        rng: &mut Option<&mut TrainRng>,
    ) -> LayerTrace {
        let cfg = &self.config;
        let (e, nh, dh, f) = (cfg.hidden_dim, cfg.n_heads, cfg.head_dim(), cfg.ffn_dim);
        let (a, ln1) = layer_norm(&x_in, e, &w[ids.ln1_g], &w[ids.ln1_b]);
        let q = linear(&a, rows, &w[ids.wq], Some(&w[ids.bq]), e);
        let k = linear(&a, rows, &w[ids.wk], Some(&w[ids.bk]), e);
        let v = linear(&a, rows, &w[ids.wv], Some(&w[ids.bv]), e);
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut probs = vec![0.0; nh * rows * rows];
        let mut ctx = vec![0.0; rows * e];
        let mut scores = vec![0.0; rows];
        for h in 0..nh {
            let off = h * dh;
            for i in 0..rows {
                let qi = &q[i * e + off..i * e + off + dh];
                let mut max = f64::NEG_INFINITY;
                for j in 0..rows {
                    if self.key_valid(mask, rows, i, j) {
                        let s = dot(qi, &k[j * e + off..j * e + off + dh]) * scale;
                        scores[j] = s;
                        max = max.max(s);
                    }
                }
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let p = &mut probs[(h * rows + i) * rows..(h * rows + i + 1) * rows];
                let mut sum = 0.0;
                for j in 0..rows {
                    if self.key_valid(mask, rows, i, j) {
                        p[j] = libm::exp(scores[j] - max);
                        sum += p[j];
                    }
                }
                let ci = &mut ctx[i * e + off..i * e + off + dh];
                for j in 0..rows {
                    if p[j] != 0.0 {
                        p[j] /= sum;
                        axpy(p[j], &v[j * e + off..j * e + off + dh], ci);
                    }
                }
            }
        }
        let mut o = linear(&ctx, rows, &w[ids.wo], Some(&w[ids.bo]), e);
        let drop_attn = dropout_mask(rng.as_deref_mut(), cfg.dropout, o.len());
        apply_mask(&mut o, &drop_attn);
        let mut x_mid = x_in;
        axpy(1.0, &o, &mut x_mid);

        let (b, ln2) = layer_norm(&x_mid, e, &w[ids.ln2_g], &w[ids.ln2_b]);
        let u = linear(&b, rows, &w[ids.w1], Some(&w[ids.b1]), f);
        let fa: Vec<f64> = u.iter().map(|&x| gelu(x)).collect();
        let mut g = linear(&fa, rows, &w[ids.w2], Some(&w[ids.b2]), e);
        let drop_ffn = dropout_mask(rng.as_deref_mut(), cfg.dropout, g.len());
        apply_mask(&mut g, &drop_ffn);

        LayerTrace { ln1, a, q, k, v, probs, ctx, drop_attn, x_mid, ln2, b, u, f: fa, drop_ffn }
    }

    fn layer_output(trace: &LayerTrace, w: &Weights, ids: &LayerIds, rows: usize, e: usize) -> Vec<f64> {
        let mut g = linear(&trace.f, rows, &w[ids.w2], Some(&w[ids.b2]), e);
        apply_mask(&mut g, &trace.drop_ffn);
        let mut x = trace.x_mid.clone();
        axpy(1.0, &g, &mut x);
        x
    }

    fn extract_traced(
        &self,
        w: &Weights,
        l1: Vec<f64>,
        mask: &[u8],
        rows: usize,
        rng: &mut Option<&mut TrainRng>,
    ) -> (Vec<f64>, Vec<LayerTrace>) {
        let e = self.config.hidden_dim;
        let mut x = l1;
        let mut traces = Vec::with_capacity(self.layout.layers.len());
        for ids in &self.layout.layers {
            let t = self.layer_forward(w, ids, x, mask, rows, rng);
            x = Self::layer_output(&t, w, ids, rows, e);
            traces.push(t);
        }
        (x, traces)
    }

    /// Runs the encoder stack over `l1` (`rows × hidden_dim`). Masked positions
    /// are never attended to.
    pub fn extract(&self, w: &Weights, l1: &[f64], mask: &[u8]) -> Result<Vec<f64>, ModelError> {
        let e = self.config.hidden_dim;
        if l1.len() != mask.len() * e {
            return Err(ModelError::Shape(format!("l1 has {} values for {} positions", l1.len(), mask.len())));
        }
        Ok(self.extract_traced(w, l1.to_vec(), mask, mask.len(), &mut None).0)
    }

    fn pool_traced(&self, w: &Weights, l2: &[f64], mask: &[u8], rows: usize) -> Result<PoolTrace, ModelError> {
        let e = self.config.hidden_dim;
        let real: Vec<usize> = (0..rows).filter(|&i| mask[i] != 0).collect();
        let (&first, &last) = match (real.first(), real.last()) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(ModelError::AllMasked),
        };
        let row = |i: usize| &l2[i * e..(i + 1) * e];
        let (select, v) = match self.config.pooler {
            PoolerKind::First => (PoolSelect::Index(first), row(first).to_vec()),
            PoolerKind::Last => (PoolSelect::Index(last), row(last).to_vec()),
            PoolerKind::Attention => {
                let score = &w[self.layout.pool_score.expect("attention pooler score")];
                let s: Vec<f64> = real.iter().map(|&i| dot(score, row(i))).collect();
                let alpha_real = softmax(&s);
                let mut alpha = vec![0.0; rows];
                let mut v = vec![0.0; e];
                for (&i, &a) in real.iter().zip(&alpha_real) {
                    alpha[i] = a;
                    axpy(a, row(i), &mut v);
                }
                (PoolSelect::Weighted(alpha), v)
            }
        };
        let mut z = linear(&v, 1, &w[self.layout.pool_w], Some(&w[self.layout.pool_b]), self.config.pooled_dim);
        for x in &mut z {
            *x = libm::tanh(*x);
        }
        Ok(PoolTrace { select, v, z })
    }

    /// Sentence representation: selects or attention-averages unmasked rows of
    /// `l2`, then applies `tanh(W v + b)`.
    pub fn pool(&self, w: &Weights, l2: &[f64], mask: &[u8]) -> Result<Vec<f64>, ModelError> {
        Ok(self.pool_traced(w, l2, mask, mask.len())?.z)
    }

    fn head_traced(&self, w: &Weights, task: Task, x: Vec<f64>, rows: usize) -> Result<(Vec<f64>, HeadTrace), ModelError> {
        let h = self.layout.heads[task.index()].ok_or(ModelError::TaskDisabled(task))?;
        if x.len() != rows * h.in_dim {
            return Err(ModelError::Shape(format!("{task} head expects width {}", h.in_dim)));
        }
        let hidden = self.config.head_hidden_dim;
        let u1 = linear(&x, rows, &w[h.w1], Some(&w[h.b1]), hidden);
        let r: Vec<f64> = u1.iter().map(|&u| u.max(0.0)).collect();
        let logits = linear(&r, rows, &w[h.w2], Some(&w[h.b2]), h.classes);
        Ok((logits, HeadTrace { x, u1, r, rows }))
    }

    /// `W2 · ReLU(W1 x + b1) + b2` for one input vector.
    pub fn head_forward(&self, w: &Weights, x: &[f64], task: Task) -> Result<Vec<f64>, ModelError> {
        if !self.config.tasks.contains(task) {
            return Err(ModelError::TaskDisabled(task));
        }
        Ok(self.head_traced(w, task, x.to_vec(), 1)?.0)
    }

    /// Inference forward over every position (padding included in `l2`).
    pub fn forward(&self, params: &ParameterStore, tokens: &TokenSequence) -> Result<ForwardOutput, ModelError> {
        Ok(self.forward_traced(&params.weights(), tokens, true, None)?.0)
    }

    /// Forward pass that records a [`Trace`]. With `all_rows` false only the
    /// unmasked prefix is computed, which is all the losses need. Passing an
    /// RNG enables dropout.
    pub fn forward_traced(
        &self,
        w: &Weights,
        tokens: &TokenSequence,
        all_rows: bool,
        mut rng: Option<&mut TrainRng>,
    ) -> Result<(ForwardOutput, Trace), ModelError> {
        let ids = self.validate_tokens(tokens)?;
        let mask = &tokens.attention_mask;
        let real_rows: Vec<usize> = (0..ids.len()).filter(|&i| mask[i] != 0).collect();
        let rows = if all_rows { ids.len() } else { real_rows.last().map_or(0, |&i| i + 1) };
        let e = self.config.hidden_dim;
        let tasks = self.config.tasks;

        let (mut l1, concat) = self.embed_rows(w, &ids, rows);
        let drop = dropout_mask(rng.as_deref_mut(), self.config.dropout, l1.len());
        apply_mask(&mut l1, &drop);
        let (l2, layers) = self.extract_traced(w, l1, mask, rows, &mut rng);

        let pool = if tasks.has_sequence_task() { Some(self.pool_traced(w, &l2, mask, rows)?) } else { None };
        let mut heads: [Option<HeadTrace>; 3] = [None, None, None];
        let mut out = ForwardOutput {
            hidden_dim: e,
            rows,
            l2: Vec::new(),
            l3: pool.as_ref().map(|p| p.z.clone()),
            logits_emotion: None,
            logits_key: None,
            logits_velocity: None,
        };
        for task in tasks.iter() {
            match task {
                Task::Emotion | Task::Key => {
                    let z = pool.as_ref().expect("pooled").z.clone();
                    let (logits, t) = self.head_traced(w, task, z, 1)?;
                    heads[task.index()] = Some(t);
                    if task == Task::Emotion {
                        out.logits_emotion = Some(logits);
                    } else {
                        out.logits_key = Some(logits);
                    }
                }
                Task::Velocity => {
                    let mut x = Vec::with_capacity(real_rows.len() * e);
                    for &i in &real_rows {
                        x.extend_from_slice(&l2[i * e..(i + 1) * e]);
                    }
                    let (logits, t) = self.head_traced(w, task, x, real_rows.len())?;
                    heads[task.index()] = Some(t);
                    out.logits_velocity = Some(logits.chunks(task.num_classes()).map(<[f64]>::to_vec).collect());
                }
            }
        }
        out.l2 = l2.clone();
        let trace = Trace { rows, real_rows, ids, embed: EmbedTrace { concat, drop }, layers, l2, pool, heads };
        Ok((out, trace))
    }

    fn head_backward(&self, w: &Weights, task: Task, t: &HeadTrace, dlogits: &[f64], grads: &mut Gradients) -> Vec<f64> {
        let h = self.layout.heads[task.index()].expect("traced head exists");
        let (gw2, gb2) = two_mut(grads, h.w2, h.b2);
        let mut dr = linear_backward(&t.r, t.rows, &w[h.w2], h.classes, dlogits, gw2, Some(gb2));
        for (d, &u) in dr.iter_mut().zip(&t.u1) {
            if u <= 0.0 {
                *d = 0.0;
            }
        }
        let (gw1, gb1) = two_mut(grads, h.w1, h.b1);
        linear_backward(&t.x, t.rows, &w[h.w1], self.config.head_hidden_dim, &dr, gw1, Some(gb1))
    }

    /// Accumulates into `grads` the gradient of `Σ ⟨upstream, logits⟩` with
    /// respect to every parameter. Only tensors on the paths of tasks with
    /// upstream gradients are touched.
    pub fn backward(&self, w: &Weights, trace: &Trace, upstream: &OutputGrads, grads: &mut Gradients) {
        let cfg = &self.config;
        let (e, k) = (cfg.hidden_dim, cfg.pooled_dim);
        let rows = trace.rows;
        let mut dl2 = vec![0.0; rows * e];

        let mut dz = vec![0.0; k];
        let mut any_seq = false;
        for (task, g) in [(Task::Emotion, &upstream.emotion), (Task::Key, &upstream.key)] {
            if let (Some(g), Some(t)) = (g, &trace.heads[task.index()]) {
                axpy(1.0, &self.head_backward(w, task, t, g, grads), &mut dz);
                any_seq = true;
            }
        }
        if let (Some(g), Some(t)) = (&upstream.velocity, &trace.heads[Task::Velocity.index()]) {
            let dx = self.head_backward(w, Task::Velocity, t, g, grads);
            for (r, &i) in trace.real_rows.iter().enumerate() {
                axpy(1.0, &dx[r * e..(r + 1) * e], &mut dl2[i * e..(i + 1) * e]);
            }
        }

        if any_seq {
            let pool = trace.pool.as_ref().expect("pooled");
            let du: Vec<f64> = dz.iter().zip(&pool.z).map(|(d, z)| d * (1.0 - z * z)).collect();
            let (gw, gb) = two_mut(grads, self.layout.pool_w, self.layout.pool_b);
            let dv = linear_backward(&pool.v, 1, &w[self.layout.pool_w], k, &du, gw, Some(gb));
            match &pool.select {
                PoolSelect::Index(i) => axpy(1.0, &dv, &mut dl2[i * e..(i + 1) * e]),
                PoolSelect::Weighted(alpha) => {
                    let sid = self.layout.pool_score.expect("attention pooler");
                    let score = &w[sid];
                    let real = &trace.real_rows;
                    let a: Vec<f64> = real.iter().map(|&i| alpha[i]).collect();
                    let da: Vec<f64> = real.iter().map(|&i| dot(&dv, &trace.l2[i * e..(i + 1) * e])).collect();
                    let ds = softmax_backward(&a, &da);
                    for ((&i, &ai), &dsi) in real.iter().zip(&a).zip(&ds) {
                        let hi = &trace.l2[i * e..(i + 1) * e];
                        axpy(dsi, hi, &mut grads[sid]);
                        let dh = &mut dl2[i * e..(i + 1) * e];
                        axpy(ai, &dv, dh);
                        axpy(dsi, score, dh);
                    }
                }
            }
        }

        let mut dx = dl2;
        for (ids, t) in self.layout.layers.iter().zip(&trace.layers).rev() {
            dx = self.layer_backward(w, ids, t, dx, rows, grads);
        }

        apply_mask(&mut dx, &trace.embed.drop);
        if let Some(pos) = self.layout.position {
            axpy(1.0, &dx, &mut grads[pos][..rows * e]);
        }
        match cfg.representation {
            Representation::Sw => {
                let tid = self.layout.tables[0];
                for i in 0..rows {
                    let id = trace.ids[i][0] as usize;
                    axpy(1.0, &dx[i * e..(i + 1) * e], &mut grads[tid][id * e..(id + 1) * e]);
                }
            }
            Representation::Cp => {
                let d = cfg.sub_embed_dim;
                let (pw, pb) = self.layout.cp_proj.expect("cp projection");
                let concat = trace.embed.concat.as_ref().expect("cp concat");
                let (gw, gb) = two_mut(grads, pw, pb);
                let dc = linear_backward(concat, rows, &w[pw], e, &dx, gw, Some(gb));
                for i in 0..rows {
                    for f in 0..4 {
                        let id = trace.ids[i][f] as usize;
                        let tid = self.layout.tables[f];
                        axpy(1.0, &dc[(i * 4 + f) * d..(i * 4 + f + 1) * d], &mut grads[tid][id * d..(id + 1) * d]);
                    }
                }
            }
        }
    }

    fn layer_backward(&self, w: &Weights, ids: &LayerIds, t: &LayerTrace, dx_out: Vec<f64>, rows: usize, grads: &mut Gradients) -> Vec<f64> {
        let cfg = &self.config;
        let (e, nh, dh, f) = (cfg.hidden_dim, cfg.n_heads, cfg.head_dim(), cfg.ffn_dim);
        let mut dx_mid = dx_out;

        let mut dg = dx_mid.clone();
        apply_mask(&mut dg, &t.drop_ffn);
        let (gw2, gb2) = two_mut(grads, ids.w2, ids.b2);
        let mut du = linear_backward(&t.f, rows, &w[ids.w2], e, &dg, gw2, Some(gb2));
        for (d, &u) in du.iter_mut().zip(&t.u) {
            *d *= gelu_grad(u);
        }
        let (gw1, gb1) = two_mut(grads, ids.w1, ids.b1);
        let db = linear_backward(&t.b, rows, &w[ids.w1], f, &du, gw1, Some(gb1));
        let (gg, gbeta) = two_mut(grads, ids.ln2_g, ids.ln2_b);
        axpy(1.0, &layer_norm_backward(&db, e, &w[ids.ln2_g], &t.ln2, gg, gbeta), &mut dx_mid);

        let mut d_o = dx_mid.clone();
        apply_mask(&mut d_o, &t.drop_attn);
        let (gwo, gbo) = two_mut(grads, ids.wo, ids.bo);
        let dctx = linear_backward(&t.ctx, rows, &w[ids.wo], e, &d_o, gwo, Some(gbo));

        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut dq = vec![0.0; rows * e];
        let mut dk = vec![0.0; rows * e];
        let mut dv = vec![0.0; rows * e];
        let mut dp = vec![0.0; rows];
        for h in 0..nh {
            let off = h * dh;
            for i in 0..rows {
                let p = &t.probs[(h * rows + i) * rows..(h * rows + i + 1) * rows];
                let dci = &dctx[i * e + off..i * e + off + dh];
                let mut inner = 0.0;
                for j in 0..rows {
                    if p[j] != 0.0 {
                        dp[j] = dot(dci, &t.v[j * e + off..j * e + off + dh]);
                        inner += p[j] * dp[j];
                        axpy(p[j], dci, &mut dv[j * e + off..j * e + off + dh]);
                    }
                }
                for j in 0..rows {
                    if p[j] != 0.0 {
                        let ds = p[j] * (dp[j] - inner) * scale;
                        axpy(ds, &t.k[j * e + off..j * e + off + dh], &mut dq[i * e + off..i * e + off + dh]);
                        axpy(ds, &t.q[i * e + off..i * e + off + dh], &mut dk[j * e + off..j * e + off + dh]);
                    }
                }
            }
        }
        let mut da = {
            let (gw, gb) = two_mut(grads, ids.wq, ids.bq);
            linear_backward(&t.a, rows, &w[ids.wq], e, &dq, gw, Some(gb))
        };
        {
            let (gw, gb) = two_mut(grads, ids.wk, ids.bk);
            axpy(1.0, &linear_backward(&t.a, rows, &w[ids.wk], e, &dk, gw, Some(gb)), &mut da);
        }
        {
            let (gw, gb) = two_mut(grads, ids.wv, ids.bv);
            axpy(1.0, &linear_backward(&t.a, rows, &w[ids.wv], e, &dv, gw, Some(gb)), &mut da);
        }
        let (gg, gbeta) = two_mut(grads, ids.ln1_g, ids.ln1_b);
        let mut dx_in = layer_norm_backward(&da, e, &w[ids.ln1_g], &t.ln1, gg, gbeta);
        axpy(1.0, &dx_mid, &mut dx_in);
        dx_in
    }
}

/// Disjoint mutable borrows of two gradient buffers.
fn two_mut(grads: &mut Gradients, a: ParamId, b: ParamId) -> (&mut [f64], &mut [f64]) {
    assert!(a.0 < b.0, "parameter ids are allocated weight-then-bias");
    let (lo, hi) = grads.0.split_at_mut(b.0);
    (&mut lo[a.0], &mut hi[0])
}
