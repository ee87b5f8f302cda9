//! Adam with a linear learning-rate decay schedule.

use std::collections::HashMap;

/// Identifies one trainable tensor across steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKey {
    LoraA(usize),
    LoraB(usize),
    Meta(usize),
    Pos,
    LnGamma(usize),
    LnBeta(usize),
}

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Steps over which the learning rate decays linearly to zero.
    pub total_steps: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            total_steps: 1,
        }
    }
}

/// First/second-moment state per parameter tensor.
#[derive(Debug, Default)]
pub struct Adam {
    state: HashMap<ParamKey, (Vec<f64>, Vec<f64>)>,
    step: usize,
}

impl Adam {
    pub fn new() -> Self {
        Adam::default()
    }

    /// The scheduled learning rate at a given step (0-based; the first
    /// update uses `lr(0) = lr`).
    pub fn lr_at(cfg: &AdamConfig, step: usize) -> f64 {
        let total = cfg.total_steps.max(1);
        cfg.lr * (1.0 - step as f64 / total as f64).max(0.0)
    }

    /// Advance the step counter. Call once per optimization step, before the
    /// per-tensor updates of that step.
    pub fn begin_step(&mut self) -> usize {
        let s = self.step;
        self.step += 1;
        s
    }

    /// Apply one Adam update to a flat parameter slice.
    pub fn update(&mut self, cfg: &AdamConfig, key: ParamKey, param: &mut [f64], grad: &[f64]) {
        assert_eq!(param.len(), grad.len());
        let (m, v) = self
            .state
            .entry(key)
            .or_insert_with(|| (vec![0.0; param.len()], vec![0.0; param.len()]));
        let t = self.step as f64; // begin_step already ran: 1-based here
        let lr = Self::lr_at(cfg, self.step - 1);
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for i in 0..param.len() {
            let g = grad[i] + cfg.weight_decay * param[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_decay_reaches_zero_at_total_steps() {
        let cfg = AdamConfig { lr: 2e-4, total_steps: 100, ..Default::default() };
        assert_eq!(Adam::lr_at(&cfg, 0), 2e-4);
        assert!((Adam::lr_at(&cfg, 50) - 1e-4).abs() < 1e-18);
        assert_eq!(Adam::lr_at(&cfg, 100), 0.0);
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let cfg = AdamConfig { lr: 0.0, total_steps: 10, ..Default::default() };
        let mut adam = Adam::new();
        let mut p = vec![1.0, -2.0, 3.0];
        adam.begin_step();
        adam.update(&cfg, ParamKey::Pos, &mut p, &[0.5, 0.5, 0.5]);
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn single_step_moves_against_gradient_by_about_lr() {
        let cfg = AdamConfig { lr: 0.01, total_steps: 1000, ..Default::default() };
        let mut adam = Adam::new();
        let mut p = vec![0.0];
        adam.begin_step();
        adam.update(&cfg, ParamKey::Pos, &mut p, &[1.0]);
        // Bias-corrected first step is a full lr-sized step.
        assert!((p[0] + 0.01).abs() < 1e-6, "p = {}", p[0]);
    }
}
