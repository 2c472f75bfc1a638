use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::{Gradients, ParamPolicy, Weights};

/// AdamW, schedule and loop hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            base_lr: 3e-5,
            warmup_steps: 500,
            batch_size: 16,
            max_epochs: 100,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} = {b} must lie in (0, 1)"));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad(format!("eps = {} must be positive", self.eps));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay = {} must be non-negative", self.weight_decay));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr = {} must be positive", self.base_lr));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be at least 1".into());
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `base_lr`, then linear decay to 0 at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LinearSchedule {
    pub fn new(base_lr: f64, warmup_steps: u64, total_steps: u64) -> Self {
        Self { base_lr, warmup_steps, total_steps }
    }

    /// `ceil(train_size / batch) × epochs` updates.
    pub fn for_run(cfg: &OptimizerConfig, train_size: usize) -> Self {
        let per_epoch = train_size.div_ceil(cfg.batch_size) as u64;
        Self::new(cfg.base_lr, cfg.warmup_steps, per_epoch * cfg.max_epochs as u64)
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if step >= self.total_steps {
            return 0.0;
        }
        if step < self.warmup_steps {
            return self.base_lr * (step as f64 / self.warmup_steps as f64);
        }
        self.base_lr * ((self.total_steps - step) as f64 / (self.total_steps - self.warmup_steps) as f64)
    }
}

/// First and second moments, kept in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Completed updates.
    pub t: u64,
}

impl AdamState {
    pub fn zeros_like(w: &Weights) -> Self {
        let z: Vec<Vec<f64>> = w.0.iter().map(|t| alloc::vec![0.0; t.len()]).collect();
        Self { m: z.clone(), v: z, t: 0 }
    }
}

/// One decoupled-weight-decay Adam update. Frozen tensors are left alone and
/// decay applies only where the policy allows it. A non-finite gradient
/// leaves everything untouched and returns an error.
pub fn optimizer_step(
    w: &mut Weights,
    g: &Gradients,
    policies: &[ParamPolicy],
    state: &mut AdamState,
    cfg: &OptimizerConfig,
    lr: f64,
) -> Result<(), TrainError> {
    for (i, (grad, p)) in g.0.iter().zip(policies).enumerate() {
        if p.trainable && grad.iter().any(|x| !x.is_finite()) {
            return Err(TrainError::NonFiniteGradient { tensor: i });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - libm::pow(cfg.beta1, f64::from(t));
    let bc2 = 1.0 - libm::pow(cfg.beta2, f64::from(t));
    for (i, p) in policies.iter().enumerate() {
        if !p.trainable {
            continue;
        }
        let decay = if p.weight_decay { 1.0 - lr * cfg.weight_decay } else { 1.0 };
        let (wt, gt, mt, vt) = (&mut w.0[i], &g.0[i], &mut state.m[i], &mut state.v[i]);
        for j in 0..wt.len() {
            let gj = gt[j];
            mt[j] = cfg.beta1 * mt[j] + (1.0 - cfg.beta1) * gj;
            vt[j] = cfg.beta2 * vt[j] + (1.0 - cfg.beta2) * gj * gj;
            let mhat = mt[j] / bc1;
            let vhat = vt[j] / bc2;
            wt[j] = wt[j] * decay - lr * mhat / (libm::sqrt(vhat) + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn schedule_points() {
        let s = LinearSchedule::new(3e-5, 500, 10_000);
        assert_eq!(s.lr_at(0), 0.0);
        assert!((s.lr_at(250) - 1.5e-5).abs() < 1e-18);
        assert_eq!(s.lr_at(500), 3e-5);
        assert_eq!(s.lr_at(10_000), 0.0);
        assert!((s.lr_at(5250) - 1.5e-5).abs() < 1e-18);
        assert!(s.lr_at(9_999) > 0.0);
        let short = LinearSchedule::new(1e-3, 500, 100);
        assert!((short.lr_at(50) - 1e-4).abs() < 1e-18);
        assert_eq!(short.lr_at(100), 0.0);
        let cfg = OptimizerConfig { batch_size: 16, max_epochs: 3, ..Default::default() };
        assert_eq!(LinearSchedule::for_run(&cfg, 33).total_steps, 9);
    }

    fn one(trainable: bool, decay: bool) -> Vec<ParamPolicy> {
        vec![ParamPolicy { trainable, weight_decay: decay }]
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let cfg = OptimizerConfig { weight_decay: 0.0, ..Default::default() };
        let mut w = Weights(vec![vec![0.3, -1.2, 4.0]]);
        let g = Gradients(vec![vec![0.0; 3]]);
        let mut st = AdamState::zeros_like(&w);
        optimizer_step(&mut w, &g, &one(true, true), &mut st, &cfg, 1e-3).unwrap();
        assert_eq!(w.0[0], vec![0.3, -1.2, 4.0]);
    }

    #[test]
    fn decay_only_shrinks_by_lr_wd() {
        let cfg = OptimizerConfig::default();
        let mut w = Weights(vec![vec![2.0]]);
        let g = Gradients(vec![vec![0.0]]);
        let mut st = AdamState::zeros_like(&w);
        let lr = 1e-3;
        optimizer_step(&mut w, &g, &one(true, true), &mut st, &cfg, lr).unwrap();
        assert!((w.0[0][0] - (2.0 - lr * 0.01 * 2.0)).abs() < 1e-15);
        let mut w2 = Weights(vec![vec![2.0]]);
        let mut st2 = AdamState::zeros_like(&w2);
        optimizer_step(&mut w2, &g, &one(true, false), &mut st2, &cfg, lr).unwrap();
        assert_eq!(w2.0[0][0], 2.0);
        optimizer_step(&mut w2, &Gradients(vec![vec![5.0]]), &one(false, true), &mut st2, &cfg, lr).unwrap();
        assert_eq!(w2.0[0][0], 2.0);
    }

    #[test]
    fn hand_computed_two_steps() {
        // p0 = 0.5, g = 0.2 then -0.1, lr = 0.01, wd = 0.01, defaults otherwise.
        let cfg = OptimizerConfig::default();
        let mut w = Weights(vec![vec![0.5]]);
        let mut st = AdamState::zeros_like(&w);
        let pol = one(true, true);
        optimizer_step(&mut w, &Gradients(vec![vec![0.2]]), &pol, &mut st, &cfg, 0.01).unwrap();
        // m = 0.02, v = 4e-5, mhat = 0.2, vhat = 0.04: p = 0.5·(1 − 1e-4) − 0.01·0.2/(0.2 + 1e-8)
        let p1 = 0.5 * (1.0 - 1e-4) - 0.01 * 0.2 / (0.2 + 1e-8);
        assert!((w.0[0][0] - p1).abs() < 1e-12);
        assert!((st.m[0][0] - 0.02).abs() < 1e-15 && (st.v[0][0] - 4e-5).abs() < 1e-18);
        optimizer_step(&mut w, &Gradients(vec![vec![-0.1]]), &pol, &mut st, &cfg, 0.01).unwrap();
        let m2 = 0.9 * 0.02 + 0.1 * -0.1;
        let v2 = 0.999 * 4e-5 + 0.001 * 0.01;
        let mhat = m2 / (1.0 - 0.81);
        let vhat = v2 / (1.0 - 0.998_001);
        let p2 = p1 * (1.0 - 1e-4) - 0.01 * mhat / (libm::sqrt(vhat) + 1e-8);
        assert!((w.0[0][0] - p2).abs() < 1e-12);
        assert!((w.0[0][0] - 0.487_237_635_271_817_6).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let cfg = OptimizerConfig::default();
        let mut w = Weights(vec![vec![1.0]]);
        let mut st = AdamState::zeros_like(&w);
        let r = optimizer_step(&mut w, &Gradients(vec![vec![f64::NAN]]), &one(true, true), &mut st, &cfg, 0.1);
        assert_eq!(r, Err(TrainError::NonFiniteGradient { tensor: 0 }));
        assert_eq!((w.0[0][0], st.t), (1.0, 0));
    }
}
