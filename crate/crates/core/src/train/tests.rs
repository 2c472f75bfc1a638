use super::*;
use crate::labeling::{EmotionClass, KeyClass, Mode, VelocityClass};
use crate::synthetic::{build_examples, generate_corpus, CorpusSpec};
use crate::model::PoolerKind;
use crate::tokenizer::{SuperToken, Tokenizer, TokenizerConfig, Tokens};

fn corpus(repr: Representation, clips: usize, seed: u64) -> Vec<Example> {
    let spec = CorpusSpec { clips, seed, label_noise: 0.0, min_notes: 6, max_notes: 10, duration_cue: repr == Representation::Cp, tonics: 12 };
    build_examples(&generate_corpus(&spec), repr, &Tokenizer::new(TokenizerConfig::default()), 32).unwrap()
}

fn small_model(repr: Representation, tasks: TaskSet) -> Model {
    let mut c = ModelConfig::tiny(repr, TokenizerConfig::default(), tasks);
    c.hidden_dim = 16;
    c.pooled_dim = 8;
    c.ffn_dim = 16;
    c.head_hidden_dim = 12;
    c.sub_embed_dim = 8;
    c.max_len = 32;
    Model::new(c).unwrap()
}

fn quick_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        optimizer: OptimizerConfig { base_lr: 3e-3, warmup_steps: 2, batch_size: 4, max_epochs: epochs, ..Default::default() },
        loss_form: LossForm::Linear,
    }
}

#[test]
fn patience_values() {
    assert_eq!(EarlyStopState::patience_for(100), 30);
    assert_eq!(EarlyStopState::patience_for(30), 9);
    assert_eq!(EarlyStopState::patience_for(3), 0);
    assert_eq!(EarlyStopState::patience_for(10), 3);
}

#[test]
fn early_stop_counts_ties_as_no_improvement() {
    let mut s = EarlyStopState::new(10);
    assert_eq!(s.update(1, 0.2), (true, false));
    assert_eq!(s.update(2, 0.5), (true, false));
    assert_eq!(s.update(3, 0.5), (false, false));
    assert_eq!(s.update(4, 0.4), (false, false));
    assert_eq!(s.update(5, 0.5), (false, true));
    assert_eq!((s.best_epoch, s.best_macro_f1), (2, 0.5));
    let mut z = EarlyStopState::new(2);
    assert_eq!(z.update(1, 0.1), (true, false));
    assert_eq!(z.update(2, 0.1), (false, true));
}

fn fd_check(model: &Model, data: &[Example], form: LossForm, sigma_shift: f64) {
    let p = model.init(4);
    let mut w = p.weights();
    for t in model.config().tasks.iter() {
        w[model.log_sigma_id(t).unwrap()][0] = sigma_shift * (1 + t as usize) as f64;
    }
    let batch: Vec<&Example> = data.iter().collect();
    let r = batch_gradients(model, &p, &w, &batch, &[], form, &Sequential).unwrap();
    let eps = 1e-4;
    let mut checked = 0;
    for (ti, t) in p.tensors().iter().enumerate() {
        let n = t.data.len();
        let stride = (n / 20).max(1);
        for k in (0..n).step_by(stride) {
            let orig = w.0[ti][k];
            w.0[ti][k] = orig + eps;
            let lp = batch_gradients(model, &p, &w, &batch, &[], form, &Sequential).unwrap().loss;
            w.0[ti][k] = orig - eps;
            let lm = batch_gradients(model, &p, &w, &batch, &[], form, &Sequential).unwrap().loss;
            w.0[ti][k] = orig;
            let num = (lp - lm) / (2.0 * eps);
            let ana = r.grads.0[ti][k];
            let rel = (num - ana).abs() / (num.abs() + ana.abs()).max(1e-6);
            assert!(rel < 1e-3, "{}[{k}] analytic {ana} numeric {num}", t.name);
            checked += 1;
        }
    }
    assert!(checked > 200);
}

#[test]
fn batch_gradient_matches_fd_including_sigma() {
    let data = corpus(Representation::Cp, 3, 1);
    let mut c = small_model(Representation::Cp, TaskSet::ALL).config().clone();
    c.init_std = 0.3;
    let m = Model::new(c).unwrap();
    fd_check(&m, &data, LossForm::Linear, 0.3);
    fd_check(&m, &data, LossForm::Squared, -0.2);
}

#[test]
fn batch_loss_with_unit_sigma_is_half_sum_plus_ln2() {
    let data = corpus(Representation::Cp, 4, 2);
    let m = small_model(Representation::Cp, TaskSet::ALL);
    let p = m.init(0);
    let batch: Vec<&Example> = data.iter().collect();
    let r = batch_gradients(&m, &p, &p.weights(), &batch, &[], LossForm::Linear, &Sequential).unwrap();
    let sum: f64 = r.task_losses.iter().map(|(_, l)| l).sum();
    assert!((r.loss - (0.5 * sum + 3.0 * core::f64::consts::LN_2)).abs() < 1e-12);
    // initial log-sigma gradient with L_t: σ·(−L/2 + 1)
    for (t, l) in r.task_losses.iter() {
        let g = r.grads[m.log_sigma_id(t).unwrap()][0];
        assert!((g - (-0.5 * l + 1.0)).abs() < 1e-12);
    }
}

#[test]
fn velocity_loss_is_mean_over_batch_notes() {
    let data = corpus(Representation::Cp, 2, 5);
    let m = small_model(Representation::Cp, TaskSet::of(&[Task::Emotion, Task::Velocity]));
    let p = m.init(1);
    let w = p.weights();
    let batch: Vec<&Example> = data.iter().collect();
    let r = batch_gradients(&m, &p, &w, &batch, &[], LossForm::Linear, &Sequential).unwrap();
    let mut sum = 0.0;
    let mut n = 0;
    for ex in &data {
        let out = m.forward(&p, &ex.tokens).unwrap();
        for (z, v) in out.logits_velocity.unwrap().iter().zip(&ex.labels.note_velocity) {
            sum += cross_entropy(z, usize::from(v.id()));
            n += 1;
        }
    }
    assert!((r.task_losses.get(Task::Velocity).unwrap() - sum / n as f64).abs() < 1e-12);
}

/// A zero-layer network rigged so that pitch id `10 + c` predicts class `c`.
fn rigged_classifier() -> (Model, ParameterStore) {
    let mut c = ModelConfig::tiny(Representation::Cp, TokenizerConfig::default(), TaskSet::EMOTION_ONLY);
    c.n_layers = 0;
    c.position_embedding = false;
    c.pooler = PoolerKind::First;
    c.max_len = 4;
    let m = Model::new(c).unwrap();
    let mut p = m.init(0);
    let mut w = p.weights();
    w.0.iter_mut().flatten().for_each(|x| *x = 0.0);
    let (d, e, k, h) = {
        let c = m.config();
        (c.sub_embed_dim, c.hidden_dim, c.pooled_dim, c.head_hidden_dim)
    };
    let pitch = p.find("embed.pitch").unwrap();
    let proj = p.find("embed.proj.weight").unwrap();
    let pool = p.find("pooler.proj.weight").unwrap();
    let head = m.head_param_ids(Task::Emotion);
    for c in 0..4 {
        w[pitch][(10 + c) * d + c] = 5.0;
        w[proj][c * 4 * d + 2 * d + c] = 1.0;
        w[pool][c * e + c] = 1.0;
        w[head[0]][c * k + c] = 1.0;
        w[head[2]][c * h + c] = 1.0;
    }
    p.assign(&w);
    (m, p)
}

#[test]
fn evaluate_hand_case() {
    let (m, p) = rigged_classifier();
    let ex = |pitch_id: u32, y: EmotionClass| Example {
        id: "x".into(),
        tokens: TokenSequence {
            tokens: Tokens::Cp(vec![SuperToken::from_fields([1, 1, pitch_id, 1])]),
            attention_mask: vec![1],
            true_length: 1,
        }
        .pad_or_truncate(4),
        labels: LabelSet { emotion: y, key: KeyClass::new(0, Mode::Major), note_velocity: vec![VelocityClass::Mf] },
    };
    let data = [ex(10, EmotionClass::Q1), ex(11, EmotionClass::Q1), ex(11, EmotionClass::Q2), ex(12, EmotionClass::Q3)];
    let r = evaluate(&m, &p, &data, &Sequential).unwrap();
    assert_eq!(r.emotion_predictions, vec![0, 1, 1, 2]);
    let em = r.emotion().unwrap();
    assert_eq!(em.accuracy, 0.75);
    assert!((em.macro_f1 - 0.5833).abs() < 1e-4);
    assert_eq!(em.confusion[0], vec![1, 1, 0, 0]);
}

#[test]
fn training_is_reproducible_and_learns() {
    let data = corpus(Representation::Sw, 24, 7);
    let m = small_model(Representation::Sw, TaskSet::of(&[Task::Emotion, Task::Key]));
    let cfg = quick_cfg(10);
    let run = || train(&m, m.init(1), &data, &data, &cfg, &Sequential, &mut |_| {}).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.best_params, b.best_params);
    assert!(a.history.len() >= 4);
    assert!(a.history.last().unwrap().train_loss < a.history[0].train_loss);
    let mut other = cfg.clone();
    other.optimizer.seed = 2;
    let c = train(&m, m.init(1), &data, &data, &other, &Sequential, &mut |_| {}).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn best_checkpoint_matches_best_epoch_metric() {
    let data = corpus(Representation::Sw, 16, 9);
    let m = small_model(Representation::Sw, TaskSet::EMOTION_ONLY);
    let out = train(&m, m.init(3), &data, &data, &quick_cfg(6), &Sequential, &mut |_| {}).unwrap();
    let r = evaluate(&m, &out.best_params, &data, &Sequential).unwrap();
    assert_eq!(r.emotion().unwrap().macro_f1, out.best_valid_macro_f1);
    assert_eq!(out.history[out.best_epoch - 1].valid.emotion().unwrap().macro_f1, out.best_valid_macro_f1);
}

#[test]
fn gating_errors() {
    let data = corpus(Representation::Sw, 4, 1);
    let m = small_model(Representation::Sw, TaskSet::of(&[Task::Key]));
    let r = train(&m, m.init(0), &data, &data, &quick_cfg(1), &Sequential, &mut |_| {});
    assert!(matches!(r, Err(TrainError::InvalidConfig(_))));
    let m = small_model(Representation::Sw, TaskSet::EMOTION_ONLY);
    assert_eq!(train(&m, m.init(0), &[], &data, &quick_cfg(1), &Sequential, &mut |_| {}).unwrap_err(), TrainError::EmptyTrainingSet);
    assert_eq!(train(&m, m.init(0), &data, &[], &quick_cfg(1), &Sequential, &mut |_| {}).unwrap_err(), TrainError::EmptyValidationSet);
    let cp = corpus(Representation::Cp, 2, 1);
    assert!(matches!(evaluate(&m, &m.init(0), &cp, &Sequential), Err(TrainError::BadExample { .. })));
    let base = m.config().clone();
    let r = run_ablation(&base, &[TaskSet::of(&[Task::Velocity])], &[0], &data, &data, &[], &quick_cfg(1), &Sequential, &mut |_, _| {});
    assert!(matches!(r, Err(TrainError::InvalidConfig(_))));
}

#[test]
fn ablation_shapes() {
    assert_eq!(default_ablation_grid(Representation::Cp).len(), 4);
    assert_eq!(default_ablation_grid(Representation::Sw).len(), 2);
    let data = corpus(Representation::Cp, 8, 4);
    let m = small_model(Representation::Cp, TaskSet::EMOTION_ONLY);
    let grid = default_ablation_grid(Representation::Cp);
    let mut seen = 0;
    let rows = run_ablation(m.config(), &grid, &[0, 1], &data, &data, &[], &quick_cfg(1), &Sequential, &mut |_, _| seen += 1).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(seen, 8);
    assert!(rows.iter().all(|r| r.runs.len() == 2));
    let empty = run_ablation(m.config(), &[], &[0], &data, &data, &[], &quick_cfg(1), &Sequential, &mut |_, _| {}).unwrap();
    assert!(empty.is_empty());
}
