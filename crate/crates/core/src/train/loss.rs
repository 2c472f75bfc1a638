use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{PerTask, TrainError};
use crate::model::{log_sum_exp, softmax, Task};

/// `−log softmax(logits)[target]`.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    log_sum_exp(logits) - logits[target]
}

/// Loss and its gradient with respect to the logits (`softmax − onehot`).
pub fn cross_entropy_with_grad(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let mut g = softmax(logits);
    g[target] -= 1.0;
    (cross_entropy(logits, target), g)
}

/// Mean cross-entropy over rows whose `keep` flag is set.
pub fn masked_cross_entropy(rows: &[Vec<f64>], targets: &[usize], keep: &[bool]) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((z, &y), &k) in rows.iter().zip(targets).zip(keep) {
        if k {
            sum += cross_entropy(z, y);
            n += 1;
        }
    }
    if n == 0 {
        return Err(TrainError::AllMasked);
    }
    Ok(sum / n as f64)
}

/// How each task loss is weighted by its learnable σ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossForm {
    /// `L_t / (2σ_t) + ln(1 + σ_t²)`.
    #[default]
    Linear,
    /// `L_t / (2σ_t²) + ln(1 + σ_t²)`.
    Squared,
}

impl LossForm {
    fn weight(self, sigma: f64) -> f64 {
        match self {
            LossForm::Linear => 0.5 / sigma,
            LossForm::Squared => 0.5 / (sigma * sigma),
        }
    }

    fn weight_derivative(self, sigma: f64) -> f64 {
        match self {
            LossForm::Linear => -0.5 / (sigma * sigma),
            LossForm::Squared => -1.0 / (sigma * sigma * sigma),
        }
    }
}

fn check_inputs(losses: &PerTask<f64>, sigmas: &PerTask<f64>) -> Result<(), TrainError> {
    for task in Task::ALL {
        match (losses.get(task), sigmas.get(task)) {
            (Some(_), Some(s)) if !(s > 0.0 && s.is_finite()) => return Err(TrainError::InvalidSigma { task, sigma: s }),
            (Some(_), None) => return Err(TrainError::MissingSigma(task)),
            _ => {}
        }
    }
    Ok(())
}

/// Adaptive multi-task objective over the tasks present in `losses`.
pub fn multitask_loss(losses: &PerTask<f64>, sigmas: &PerTask<f64>, form: LossForm) -> Result<f64, TrainError> {
    check_inputs(losses, sigmas)?;
    Ok(losses
        .iter()
        .map(|(task, l)| {
            let s = sigmas.get(task).expect("checked");
            form.weight(s) * l + libm::log1p(s * s)
        })
        .sum())
}

/// Partial derivatives of [`multitask_loss`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MultitaskGrad {
    /// `∂L/∂L_t`: the factor applied to each task's own gradient.
    pub loss_weight: PerTask<f64>,
    /// `∂L/∂σ_t`.
    pub d_sigma: PerTask<f64>,
}

pub fn multitask_grad(losses: &PerTask<f64>, sigmas: &PerTask<f64>, form: LossForm) -> Result<MultitaskGrad, TrainError> {
    check_inputs(losses, sigmas)?;
    let mut g = MultitaskGrad::default();
    for (task, l) in losses.iter() {
        let s = sigmas.get(task).expect("checked");
        g.loss_weight.set(task, form.weight(s));
        g.d_sigma.set(task, form.weight_derivative(s) * l + 2.0 * s / (1.0 + s * s));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn per(v: &[(Task, f64)]) -> PerTask<f64> {
        let mut p = PerTask::default();
        for &(t, x) in v {
            p.set(t, x);
        }
        p
    }

    #[test]
    fn cross_entropy_cases() {
        assert!((cross_entropy(&[0.3; 4], 2) - libm::log(4.0)).abs() < 1e-15);
        assert!(cross_entropy(&[800.0, 0.0, 0.0, 0.0], 0) < 1e-300);
        let rows = alloc::vec![alloc::vec![2.0, 0.0, -1.0], alloc::vec![9.0, 9.0, 9.0]];
        let a = cross_entropy(&rows[0], 1);
        assert_eq!(masked_cross_entropy(&rows, &[1, 0], &[true, false]).unwrap(), a);
        assert_eq!(masked_cross_entropy(&rows, &[1, 0], &[false, false]), Err(TrainError::AllMasked));
    }

    #[test]
    fn worked_loss_values() {
        let one = multitask_loss(&per(&[(Task::Emotion, 2.0)]), &per(&[(Task::Emotion, 1.0)]), LossForm::Linear).unwrap();
        assert!((one - 1.693_147_180_559_945).abs() < 1e-12);
        assert!((one - 1.6931).abs() < 1e-4);
        let all = Task::ALL.map(|t| (t, 0.0));
        let ones = Task::ALL.map(|t| (t, 1.0));
        let three = multitask_loss(&per(&all), &per(&ones), LossForm::Linear).unwrap();
        assert!((three - 3.0 * core::f64::consts::LN_2).abs() < 1e-12);
        let two = multitask_loss(
            &per(&[(Task::Emotion, 1.0), (Task::Key, 1.0)]),
            &per(&[(Task::Emotion, 1.0), (Task::Key, 2.0)]),
            LossForm::Linear,
        )
        .unwrap();
        // 0.5 + ln 2 + 0.25 + ln 5 = 0.75 + ln 10
        assert!((two - (0.75 + libm::log(10.0))).abs() < 1e-12);
        assert!((two - 3.0526).abs() < 1e-4);
    }

    #[test]
    fn unit_sigma_identity() {
        let l = per(&[(Task::Emotion, 0.7), (Task::Key, 2.9), (Task::Velocity, 1.3)]);
        let s = per(&Task::ALL.map(|t| (t, 1.0)));
        let v = multitask_loss(&l, &s, LossForm::Linear).unwrap();
        assert_eq!(v, 0.5 * 0.7 + 1.0 * core::f64::consts::LN_2 + (0.5 * 2.9 + core::f64::consts::LN_2) + (0.5 * 1.3 + core::f64::consts::LN_2));
    }

    #[test]
    fn sigma_derivative_matches_closed_form_and_fd() {
        for form in [LossForm::Linear, LossForm::Squared] {
            for (l, s) in [(0.0, 1.0), (1.3, 0.4), (2.2, 1.7), (0.05, 3.0)] {
                let losses = per(&[(Task::Key, l)]);
                let g = multitask_grad(&losses, &per(&[(Task::Key, s)]), form).unwrap();
                let d = g.d_sigma.get(Task::Key).unwrap();
                if form == LossForm::Linear {
                    let closed = -l / (2.0 * s * s) + 2.0 * s / (1.0 + s * s);
                    assert!((d - closed).abs() < 1e-14);
                }
                let eps = 1e-6;
                let f = |s: f64| multitask_loss(&losses, &per(&[(Task::Key, s)]), form).unwrap();
                let fd = (f(s + eps) - f(s - eps)) / (2.0 * eps);
                assert!((d - fd).abs() < 1e-7, "{form:?} {l} {s}: {d} vs {fd}");
            }
        }
        let g = multitask_grad(&per(&[(Task::Emotion, 0.0)]), &per(&[(Task::Emotion, 1.0)]), LossForm::Linear).unwrap();
        assert_eq!(g.d_sigma.get(Task::Emotion), Some(1.0));
    }

    #[test]
    fn non_positive_sigma_rejected() {
        let r = multitask_loss(&per(&[(Task::Emotion, 1.0)]), &per(&[(Task::Emotion, 0.0)]), LossForm::Linear);
        assert!(matches!(r, Err(TrainError::InvalidSigma { .. })));
        let r = multitask_loss(&per(&[(Task::Emotion, 1.0)]), &PerTask::default(), LossForm::Linear);
        assert_eq!(r, Err(TrainError::MissingSigma(Task::Emotion)));
    }
}
