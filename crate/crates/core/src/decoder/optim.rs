//! Adam and the cosine learning-rate schedule.

use std::f64::consts::PI;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning rate at `step` of `total`, decaying from `lr_start` (step 0) to
/// `lr_end` (step `total − 1`) along a half cosine.
pub fn cosine_lr(step: usize, total: usize, lr_start: f64, lr_end: f64) -> f64 {
    if total <= 1 {
        return lr_start;
    }
    let frac = step.min(total - 1) as f64 / (total - 1) as f64;
    lr_end + 0.5 * (lr_start - lr_end) * (1.0 + (PI * frac).cos())
}

/// Adam state over a fixed list of tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One bias-corrected update; `params` and `grads` are in the order the
    /// optimizer was built with.
    pub fn step(&mut self, params: Vec<&mut Vec<f64>>, grads: Vec<&Vec<f64>>, lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter list changed");
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-3, 1e-6), 1e-3);
        assert!((cosine_lr(99, 100, 1e-3, 1e-6) - 1e-6).abs() < 1e-12);
        let mid = cosine_lr(50, 101, 1.0, 0.0);
        assert!((mid - 0.5).abs() < 1e-12);
        assert_eq!(cosine_lr(0, 1, 0.3, 0.1), 0.3);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = vec![1.0, -2.0];
        let g = vec![0.5, -3.0];
        let mut opt = Adam::new(&[2]);
        opt.step(vec![&mut p], vec![&g], 0.1);
        // bias correction makes the first step ±lr (up to ε)
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![3.0];
        let mut opt = Adam::new(&[1]);
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 1.0)];
            opt.step(vec![&mut p], vec![&g], 0.01);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }
}
