//! Multi-task fine-tuning: per-task cross-entropy, the adaptive σ-weighted
//! objective, AdamW with a linear schedule, early stopping on validation
//! emotion macro-F1, evaluation and the task ablation grid.

mod loss;
mod metrics;
mod optim;

pub use loss::{cross_entropy, cross_entropy_with_grad, masked_cross_entropy, multitask_grad, multitask_loss, LossForm, MultitaskGrad};
pub use metrics::{argmax, mean_std, ClassScores, ClassificationReport};
pub use optim::{optimizer_step, AdamState, LinearSchedule, OptimizerConfig};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::labeling::LabelSet;
use crate::model::{Gradients, Model, ModelConfig, ModelError, OutputGrads, ParameterStore, Task, TaskSet, TrainRng, Weights};
use crate::tokenizer::{Representation, TokenSequence};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("the training set is empty")]
    EmptyTrainingSet,
    #[error("the validation set is empty")]
    EmptyValidationSet,
    #[error("every position is masked")]
    AllMasked,
    #[error("sigma for {task} is {sigma}; it must be positive and finite")]
    InvalidSigma { task: Task, sigma: f64 },
    #[error("no sigma for enabled task {0}")]
    MissingSigma(Task),
    #[error("non-finite gradient in tensor {tensor}")]
    NonFiniteGradient { tensor: usize },
    #[error("parameters became non-finite after epoch {epoch}")]
    NonFiniteParameters { epoch: usize },
    #[error("example {index} ({id}): {reason}")]
    BadExample { index: usize, id: String, reason: String },
}

/// One optional value per task.
#[derive(Debug, Clone, PartialEq)]
pub struct PerTask<T> {
    values: [Option<T>; 3],
}

impl<T> Default for PerTask<T> {
    fn default() -> Self {
        Self { values: [None, None, None] }
    }
}

impl<T> PerTask<T> {
    pub fn set(&mut self, task: Task, value: T) {
        self.values[task.index()] = Some(value);
    }

    pub fn get_ref(&self, task: Task) -> Option<&T> {
        self.values[task.index()].as_ref()
    }

    pub fn iter_ref(&self) -> impl Iterator<Item = (Task, &T)> {
        Task::ALL.into_iter().filter_map(|t| self.values[t.index()].as_ref().map(|v| (t, v)))
    }

    pub fn tasks(&self) -> TaskSet {
        TaskSet::of(&self.iter_ref().map(|(t, _)| t).collect::<Vec<_>>())
    }
}

impl<T: Copy> PerTask<T> {
    pub fn get(&self, task: Task) -> Option<T> {
        self.values[task.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Task, T)> + '_ {
        Task::ALL.into_iter().filter_map(|t| self.values[t.index()].map(|v| (t, v)))
    }
}

/// A tokenized clip with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub tokens: TokenSequence,
    pub labels: LabelSet,
}

impl Example {
    /// Unmasked positions, each of which carries a velocity label.
    pub fn real_positions(&self) -> usize {
        self.tokens.attention_mask.iter().filter(|&&m| m != 0).count()
    }
}

/// Everything the loop needs beyond the model architecture.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub loss_form: LossForm,
}

/// Runs a function over a slice, possibly in parallel. Results come back in
/// input order, so reductions over them are deterministic.
pub trait Executor: Sync {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send;
}

/// Plain in-order iteration.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        items.iter().map(f).collect()
    }
}

/// Patience bookkeeping. "Improved" means strictly greater than the best.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopState {
    pub best_macro_f1: f64,
    /// 1-based; 0 until the first evaluation.
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub patience: usize,
}

impl EarlyStopState {
    /// `⌊0.3·N⌋`, computed in integers.
    pub fn patience_for(max_epochs: usize) -> usize {
        max_epochs * 3 / 10
    }

    pub fn new(max_epochs: usize) -> Self {
        Self { best_macro_f1: f64::NEG_INFINITY, best_epoch: 0, epochs_since_improvement: 0, patience: Self::patience_for(max_epochs) }
    }

    /// Records one validation score; returns `(improved, stop)`.
    pub fn update(&mut self, epoch: usize, macro_f1: f64) -> (bool, bool) {
        if macro_f1 > self.best_macro_f1 {
            self.best_macro_f1 = macro_f1;
            self.best_epoch = epoch;
            self.epochs_since_improvement = 0;
            (true, false)
        } else {
            self.epochs_since_improvement += 1;
            (false, self.epochs_since_improvement >= self.patience)
        }
    }
}

/// σ_t = exp(s_t) for every enabled task.
pub fn sigmas(model: &Model, w: &Weights) -> PerTask<f64> {
    let mut s = PerTask::default();
    for task in model.config().tasks.iter() {
        if let Some(id) = model.log_sigma_id(task) {
            s.set(task, libm::exp(w[id][0]));
        }
    }
    s
}

fn check_examples(model: &Model, data: &[Example]) -> Result<(), TrainError> {
    let cfg = model.config();
    for (index, ex) in data.iter().enumerate() {
        let bad = |reason: String| Err(TrainError::BadExample { index, id: ex.id.clone(), reason });
        if ex.tokens.representation() != cfg.representation {
            return bad(format!("tokens are {:?}, model expects {:?}", ex.tokens.representation(), cfg.representation));
        }
        if ex.tokens.len() > cfg.max_len {
            return bad(format!("length {} exceeds max_len {}", ex.tokens.len(), cfg.max_len));
        }
        let real = ex.real_positions();
        if real == 0 {
            return bad("no unmasked positions".into());
        }
        if cfg.tasks.contains(Task::Velocity) && ex.labels.note_velocity.len() < real {
            return bad(format!("{} velocity labels for {real} positions", ex.labels.note_velocity.len()));
        }
    }
    Ok(())
}

/// Loss and gradient of one mini-batch.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub loss: f64,
    pub task_losses: PerTask<f64>,
    pub grads: Gradients,
}

struct ExampleOutcome {
    ce: PerTask<f64>,
    grads: Gradients,
}

/// Forward and backward over a batch. Sequence-level task losses are means
/// over examples; the velocity loss is the mean over every real note in the
/// batch. `dropout_seeds` holds one seed per example, or is empty for none.
pub fn batch_gradients<X: Executor>(
    model: &Model,
    template: &ParameterStore,
    w: &Weights,
    batch: &[&Example],
    dropout_seeds: &[u64],
    form: LossForm,
    exec: &X,
) -> Result<BatchResult, TrainError> {
    let tasks = model.config().tasks;
    let sig = sigmas(model, w);
    let mut zero = PerTask::default();
    for t in tasks.iter() {
        zero.set(t, 0.0);
    }
    let weight = multitask_grad(&zero, &sig, form)?.loss_weight;
    let b = batch.len() as f64;
    let notes: usize = batch.iter().map(|e| e.real_positions()).sum();
    if tasks.contains(Task::Velocity) && notes == 0 {
        return Err(TrainError::AllMasked);
    }
    let use_dropout = model.config().dropout > 0.0 && !dropout_seeds.is_empty();
    let jobs: Vec<(usize, &Example)> = batch.iter().copied().enumerate().collect();

    let outcomes = exec.map(&jobs, |&(k, ex)| -> Result<ExampleOutcome, TrainError> {
        let mut rng = use_dropout.then(|| TrainRng::seed_from_u64(dropout_seeds[k]));
        let (out, trace) = model.forward_traced(w, &ex.tokens, false, rng.as_mut())?;
        let mut ce = PerTask::default();
        let mut up = OutputGrads::default();
        let seq = |logits: &[f64], target: u8, task: Task, ce: &mut PerTask<f64>| {
            let (l, mut g) = cross_entropy_with_grad(logits, usize::from(target));
            let s = weight.get(task).expect("enabled") / b;
            g.iter_mut().for_each(|x| *x *= s);
            ce.set(task, l);
            g
        };
        if let Some(z) = &out.logits_emotion {
            up.emotion = Some(seq(z, ex.labels.emotion.id(), Task::Emotion, &mut ce));
        }
        if let Some(z) = &out.logits_key {
            up.key = Some(seq(z, ex.labels.key.id(), Task::Key, &mut ce));
        }
        if let Some(rows) = &out.logits_velocity {
            let s = weight.get(Task::Velocity).expect("enabled") / notes as f64;
            let mut sum = 0.0;
            let mut g = Vec::with_capacity(rows.len() * 6);
            for (z, label) in rows.iter().zip(&ex.labels.note_velocity) {
                let (l, gi) = cross_entropy_with_grad(z, usize::from(label.id()));
                sum += l;
                g.extend(gi.iter().map(|x| x * s));
            }
            ce.set(Task::Velocity, sum);
            up.velocity = Some(g);
        }
        let mut grads = Gradients::zeros_like(template);
        model.backward(w, &trace, &up, &mut grads);
        Ok(ExampleOutcome { ce, grads })
    });

    let mut grads = Gradients::zeros_like(template);
    let mut sums = [0.0f64; 3];
    for o in outcomes {
        let o = o?;
        grads.add(&o.grads);
        for (t, l) in o.ce.iter() {
            sums[t.index()] += l;
        }
    }
    let mut task_losses = PerTask::default();
    for t in tasks.iter() {
        let denom = if t.is_note_level() { notes as f64 } else { b };
        task_losses.set(t, sums[t.index()] / denom);
    }
    let loss = multitask_loss(&task_losses, &sig, form)?;
    let mg = multitask_grad(&task_losses, &sig, form)?;
    for (t, d) in mg.d_sigma.iter() {
        let id = model.log_sigma_id(t).expect("enabled task has sigma");
        grads[id][0] += d * sig.get(t).expect("enabled");
    }
    Ok(BatchResult { loss, task_losses, grads })
}

/// Metrics on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_examples: usize,
    pub reports: PerTask<ClassificationReport>,
    /// Mean cross-entropy per task (per note for velocity).
    pub losses: PerTask<f64>,
    pub emotion_predictions: Vec<usize>,
}

impl EvalReport {
    pub fn emotion(&self) -> Option<&ClassificationReport> {
        self.reports.get_ref(Task::Emotion)
    }
}

struct ExampleEval {
    pred: [usize; 2],
    ce: [f64; 2],
    vel: Vec<(usize, usize)>,
    vel_ce: f64,
}

pub fn evaluate<X: Executor>(model: &Model, params: &ParameterStore, data: &[Example], exec: &X) -> Result<EvalReport, TrainError> {
    check_examples(model, data)?;
    let tasks = model.config().tasks;
    let w = params.weights();
    let results = exec.map(data, |ex| -> Result<ExampleEval, TrainError> {
        let (out, _) = model.forward_traced(&w, &ex.tokens, false, None)?;
        let mut e = ExampleEval { pred: [0; 2], ce: [0.0; 2], vel: Vec::new(), vel_ce: 0.0 };
        for (k, (task, target)) in [(Task::Emotion, ex.labels.emotion.id()), (Task::Key, ex.labels.key.id())].into_iter().enumerate() {
            if let Some(z) = out.logits(task) {
                e.pred[k] = argmax(z);
                e.ce[k] = cross_entropy(z, usize::from(target));
            }
        }
        if let Some(rows) = &out.logits_velocity {
            for (z, label) in rows.iter().zip(&ex.labels.note_velocity) {
                let y = usize::from(label.id());
                e.vel.push((y, argmax(z)));
                e.vel_ce += cross_entropy(z, y);
            }
        }
        Ok(e)
    });
    let results: Vec<ExampleEval> = results.into_iter().collect::<Result<_, _>>()?;

    let mut reports = PerTask::default();
    let mut losses = PerTask::default();
    for (k, (task, truth)) in [
        (Task::Emotion, data.iter().map(|e| usize::from(e.labels.emotion.id())).collect::<Vec<_>>()),
        (Task::Key, data.iter().map(|e| usize::from(e.labels.key.id())).collect()),
    ]
    .into_iter()
    .enumerate()
    {
        if tasks.contains(task) {
            let preds: Vec<usize> = results.iter().map(|r| r.pred[k]).collect();
            reports.set(task, ClassificationReport::from_predictions(&truth, &preds, task.num_classes()));
            losses.set(task, results.iter().map(|r| r.ce[k]).sum::<f64>() / data.len().max(1) as f64);
        }
    }
    if tasks.contains(Task::Velocity) {
        let pairs: Vec<(usize, usize)> = results.iter().flat_map(|r| r.vel.iter().copied()).collect();
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        reports.set(Task::Velocity, ClassificationReport::from_predictions(&t, &p, Task::Velocity.num_classes()));
        losses.set(Task::Velocity, results.iter().map(|r| r.vel_ce).sum::<f64>() / pairs.len().max(1) as f64);
    }
    let emotion_predictions = if tasks.contains(Task::Emotion) { results.iter().map(|r| r.pred[0]).collect() } else { Vec::new() };
    Ok(EvalReport { n_examples: data.len(), reports, losses, emotion_predictions })
}

/// Summary of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate of the last update.
    pub lr: f64,
    pub steps: u64,
    pub skipped_steps: usize,
    /// Mean combined objective over the epoch's batches.
    pub train_loss: f64,
    pub train_task_losses: PerTask<f64>,
    pub sigma: PerTask<f64>,
    pub valid: EvalReport,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation emotion macro-F1.
    pub best_params: ParameterStore,
    pub best_epoch: usize,
    pub best_valid_macro_f1: f64,
    /// Epoch after which the loop ended.
    pub last_epoch: usize,
    pub stopped_early: bool,
    pub history: Vec<EpochRecord>,
    /// Human-readable notes such as skipped updates.
    pub diagnostics: Vec<String>,
}

/// The epoch loop: shuffle, mini-batch updates, validate, early-stop. The
/// returned parameters are the best-validation snapshot.
pub fn train<X: Executor>(
    model: &Model,
    init: ParameterStore,
    train_set: &[Example],
    valid_set: &[Example],
    cfg: &TrainConfig,
    exec: &X,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    let opt = &cfg.optimizer;
    opt.validate()?;
    if !model.config().tasks.contains(Task::Emotion) {
        return Err(TrainError::InvalidConfig("the emotion task must be enabled; it drives model selection".into()));
    }
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if valid_set.is_empty() {
        return Err(TrainError::EmptyValidationSet);
    }
    model.check_layout(&init)?;
    check_examples(model, train_set)?;
    check_examples(model, valid_set)?;

    let policies = model.param_policies();
    let mut store = init;
    let mut w = store.weights();
    let mut adam = AdamState::zeros_like(&w);
    let schedule = LinearSchedule::for_run(opt, train_set.len());
    let mut rng = TrainRng::seed_from_u64(opt.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut early = EarlyStopState::new(opt.max_epochs);
    let mut best = store.clone();
    let mut history = Vec::new();
    let mut diagnostics = Vec::new();
    let mut stopped_early = false;
    let mut last_epoch = 0;

    for epoch in 1..=opt.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut task_sums = [0.0f64; 3];
        let mut batches = 0usize;
        let mut skipped = 0usize;
        let mut lr = 0.0;
        for chunk in order.chunks(opt.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            let seeds: Vec<u64> = chunk.iter().map(|_| rng.next_u64()).collect();
            let r = batch_gradients(model, &store, &w, &batch, &seeds, cfg.loss_form, exec)?;
            let step = adam.t + 1;
            lr = schedule.lr_at(step);
            match optimizer_step(&mut w, &r.grads, &policies, &mut adam, opt, lr) {
                Ok(()) => {}
                Err(TrainError::NonFiniteGradient { tensor }) => {
                    skipped += 1;
                    diagnostics.push(format!(
                        "epoch {epoch}: skipped update {step}: non-finite gradient in {}",
                        store.tensors()[tensor].name
                    ));
                    continue;
                }
                Err(e) => return Err(e),
            }
            loss_sum += r.loss;
            for (t, l) in r.task_losses.iter() {
                task_sums[t.index()] += l;
            }
            batches += 1;
        }
        if w.0.iter().flatten().any(|x| !x.is_finite()) {
            return Err(TrainError::NonFiniteParameters { epoch });
        }
        store.assign(&w);
        let valid = evaluate(model, &store, valid_set, exec)?;
        let f1 = valid.emotion().expect("emotion enabled").macro_f1;
        let (improved, stop) = early.update(epoch, f1);
        if improved {
            best = store.clone();
        }
        let mut train_task_losses = PerTask::default();
        for t in model.config().tasks.iter() {
            train_task_losses.set(t, task_sums[t.index()] / batches.max(1) as f64);
        }
        let record = EpochRecord {
            epoch,
            lr,
            steps: adam.t,
            skipped_steps: skipped,
            train_loss: loss_sum / batches.max(1) as f64,
            train_task_losses,
            sigma: sigmas(model, &w),
            valid,
            improved,
        };
        on_epoch(&record);
        history.push(record);
        last_epoch = epoch;
        if stop {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        best_params: best,
        best_epoch: early.best_epoch,
        best_valid_macro_f1: early.best_macro_f1,
        last_epoch,
        stopped_early,
        history,
        diagnostics,
    })
}

/// The rows of the task ablation: auxiliary task sets trained alongside emotion.
pub fn default_ablation_grid(representation: Representation) -> Vec<TaskSet> {
    let mut grid = vec![TaskSet::empty(), TaskSet::of(&[Task::Key])];
    if !representation.velocity_exposed() {
        grid.push(TaskSet::of(&[Task::Velocity]));
        grid.push(TaskSet::of(&[Task::Key, Task::Velocity]));
    }
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub best_epoch: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub aux_tasks: TaskSet,
    pub runs: Vec<RunResult>,
    /// (mean, population std) over runs.
    pub accuracy: (f64, f64),
    pub macro_f1: (f64, f64),
}

/// Trains one model per grid row and seed and scores the best checkpoint on
/// `test` (falling back to `valid` when `test` is empty).
#[allow(clippy::too_many_arguments)]
pub fn run_ablation<X: Executor>(
    base: &ModelConfig,
    grid: &[TaskSet],
    seeds: &[u64],
    train_set: &[Example],
    valid_set: &[Example],
    test_set: &[Example],
    cfg: &TrainConfig,
    exec: &X,
    on_run: &mut dyn FnMut(TaskSet, &RunResult),
) -> Result<Vec<AblationRow>, TrainError> {
    for aux in grid {
        if aux.contains(Task::Emotion) {
            return Err(TrainError::InvalidConfig("ablation rows list auxiliary tasks only".into()));
        }
        if aux.contains(Task::Velocity) && base.representation.velocity_exposed() {
            return Err(TrainError::InvalidConfig("velocity rows need the compound-word representation".into()));
        }
    }
    let scored = if test_set.is_empty() { valid_set } else { test_set };
    let mut rows = Vec::with_capacity(grid.len());
    for &aux in grid {
        let mut mc = base.clone();
        mc.tasks = aux.with(Task::Emotion);
        let model = Model::new(mc)?;
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut c = cfg.clone();
            c.optimizer.seed = seed;
            let outcome = train(&model, model.init(seed), train_set, valid_set, &c, exec, &mut |_| {})?;
            let report = evaluate(&model, &outcome.best_params, scored, exec)?;
            let em = report.emotion().expect("emotion enabled");
            let run = RunResult { seed, best_epoch: outcome.best_epoch, accuracy: em.accuracy, macro_f1: em.macro_f1 };
            on_run(aux, &run);
            runs.push(run);
        }
        let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
        let f1: Vec<f64> = runs.iter().map(|r| r.macro_f1).collect();
        rows.push(AblationRow { aux_tasks: aux, accuracy: mean_std(&acc), macro_f1: mean_std(&f1), runs });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests;
