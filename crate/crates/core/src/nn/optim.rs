//! AdamW with decoupled weight decay, and a linear learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::param::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 0.01 }
    }
}

impl AdamWConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: &str| Err(Error::config(format!("adamw.{k}"), m));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", "must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", "must be in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be > 0");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be >= 0");
        }
        Ok(())
    }
}

/// One AdamW update over every group using the configured learning rate.
pub fn adamw_step(groups: &mut ParamSet, cfg: &AdamWConfig) -> Result<()> {
    adamw_step_with_lr(groups, cfg, cfg.learning_rate)
}

/// One AdamW update with an explicit learning rate (for schedules).
///
/// Weight decay multiplies the value by `1 - lr * weight_decay` before the
/// moment update; it never enters the gradient. Gradients are zeroed
/// afterwards. All groups are checked for finite gradients before any of
/// them is touched.
pub fn adamw_step_with_lr(groups: &mut ParamSet, cfg: &AdamWConfig, lr: f64) -> Result<()> {
    for g in groups.iter() {
        if !g.grad.is_finite() {
            return Err(Error::NonFiniteGradient(g.name.clone()));
        }
    }
    for g in groups.iter_mut() {
        g.step += 1;
        let t = g.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let decay = 1.0 - lr * cfg.weight_decay;
        let value = g.value.data_mut();
        let grad = g.grad.data();
        let m = g.first_moment.data_mut();
        let v = g.second_moment.data_mut();
        for i in 0..value.len() {
            value[i] *= decay;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            value[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        g.grad.fill(0.0);
    }
    Ok(())
}

/// Linear warmup to `base_lr`, then linear decay to zero at `total_steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSchedule {
    pub base_lr: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl LinearSchedule {
    pub fn new(base_lr: f64, total_steps: usize, warmup_fraction: f64) -> Self {
        let warmup_steps = (warmup_fraction * total_steps as f64).round() as usize;
        Self { base_lr, total_steps, warmup_steps }
    }

    /// Learning rate for the zero-based optimizer step `step`.
    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return self.base_lr;
        }
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let decay_steps = (self.total_steps - self.warmup_steps).max(1) as f64;
        let done = (step - self.warmup_steps) as f64;
        self.base_lr * (1.0 - done / decay_steps).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;

    fn single(value: f64) -> ParamSet {
        let mut set = ParamSet::new();
        set.add("w", Matrix::scalar(value));
        set
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let mut set = single(0.37);
        let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
        adamw_step(&mut set, &cfg).unwrap();
        assert_eq!(set.iter().next().unwrap().value.item(), 0.37);
    }

    #[test]
    fn decoupled_decay_scales_value() {
        let mut set = single(2.0);
        let cfg = AdamWConfig { learning_rate: 0.1, weight_decay: 0.1, ..AdamWConfig::default() };
        adamw_step(&mut set, &cfg).unwrap();
        assert!((set.iter().next().unwrap().value.item() - 2.0 * (1.0 - 0.01)).abs() < 1e-15);
    }

    #[test]
    fn one_step_on_square_decreases() {
        let mut set = single(1.0);
        let id = set.ids().next().unwrap();
        let f = |w: f64| w * w;
        let before = f(set.value(id).item());
        set.get_mut(id).grad = Matrix::scalar(2.0 * before.sqrt());
        adamw_step(&mut set, &AdamWConfig::with_learning_rate(0.01)).unwrap();
        assert!(f(set.value(id).item()) < before);
        assert_eq!(set.get(id).grad.item(), 0.0);
        assert_eq!(set.get(id).step, 1);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_update() {
        let mut set = single(1.0);
        let id = set.ids().next().unwrap();
        set.get_mut(id).grad = Matrix::scalar(f64::NAN);
        assert!(matches!(adamw_step(&mut set, &AdamWConfig::default()), Err(Error::NonFiniteGradient(_))));
        assert_eq!(set.value(id).item(), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(AdamWConfig::default().validate().is_ok());
        assert!(AdamWConfig { beta1: 1.0, ..AdamWConfig::default() }.validate().is_err());
        assert!(AdamWConfig { learning_rate: 0.0, ..AdamWConfig::default() }.validate().is_err());
    }

    #[test]
    fn linear_schedule_shape() {
        let s = LinearSchedule::new(1.0, 10, 0.0);
        assert_eq!(s.lr(0), 1.0);
        assert!((s.lr(5) - 0.5).abs() < 1e-15);
        assert_eq!(s.lr(10), 0.0);
        let w = LinearSchedule::new(1.0, 10, 0.2);
        assert_eq!(w.lr(0), 0.5);
        assert_eq!(w.lr(1), 1.0);
        assert_eq!(w.lr(2), 1.0);
    }
}
