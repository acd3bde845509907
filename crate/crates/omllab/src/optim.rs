//! Numeric optimizers for the meta-update.
//!
//! These operate on flat parameter vectors outside the graph; inner-loop
//! updates happen in-graph (see metatrain) so that they stay
//! differentiable, while the meta-update itself never needs a gradient.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction over one flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, dim: usize) -> Self {
        Adam { cfg, t: 0, m: vec![0.0; dim], v: vec![0.0; dim] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.cfg.eps);
        }
    }
}

pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) {
    assert_eq!(params.len(), grads.len());
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}

pub fn global_norm(grads: &[f64]) -> f64 {
    grads.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Scale `grads` down so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_with_zero_gradient_is_a_no_op() {
        let mut adam = Adam::new(AdamConfig::default(), 3);
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        for _ in 0..5 {
            adam.step(&mut p, &[0.0, 0.0, 0.0], 0.1);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With bias correction, step 1 moves each coordinate by exactly
        // lr * sign(g) up to eps.
        let mut adam = Adam::new(AdamConfig::default(), 2);
        let mut p = vec![0.0, 0.0];
        adam.step(&mut p, &[0.3, -7.0], 0.01);
        assert!((p[0] + 0.01).abs() < 1e-6, "{}", p[0]);
        assert!((p[1] - 0.01).abs() < 1e-6, "{}", p[1]);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut adam = Adam::new(AdamConfig::default(), 1);
        let mut p = vec![3.0];
        for _ in 0..500 {
            let g = vec![2.0 * p[0]];
            adam.step(&mut p, &g, 0.05);
        }
        assert!(p[0].abs() < 0.05, "{}", p[0]);
    }

    #[test]
    fn clipping_preserves_direction_and_caps_norm() {
        let mut g = vec![3.0, 4.0]; // norm 5
        let pre = clip_global_norm(&mut g, 10.0);
        assert_eq!(pre, 5.0);
        assert_eq!(g, vec![3.0, 4.0]);

        let mut g = vec![30.0, 40.0]; // norm 50
        let pre = clip_global_norm(&mut g, 10.0);
        assert_eq!(pre, 50.0);
        assert!((global_norm(&g) - 10.0).abs() < 1e-12);
        assert!((g[0] / g[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn sgd_step_matches_hand_update() {
        let mut p = vec![1.0, 2.0];
        sgd_step(&mut p, &[0.5, -1.0], 0.1);
        assert_eq!(p, vec![0.95, 2.1]);
    }
}
