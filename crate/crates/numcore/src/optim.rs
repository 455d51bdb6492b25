use serde::{Deserialize, Serialize};

use crate::error::NumError;
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Linear warmup followed by cosine decay to a floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub floor_lr: f64,
    pub total_steps: u64,
    /// Fraction of `total_steps` spent in linear warmup.
    pub warmup_frac: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base_lr: 1e-3,
            floor_lr: 1e-5,
            total_steps: 1000,
            warmup_frac: 0.05,
        }
    }
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule {
            base_lr: lr,
            floor_lr: lr,
            total_steps: 1,
            warmup_frac: 0.0,
        }
    }

    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_frac.clamp(0.0, 1.0) * self.total_steps as f64).round() as u64
    }

    /// Learning rate for a zero-based step index. The last step
    /// (`total_steps - 1`) and everything after it use the floor rate.
    pub fn lr_at(&self, step: u64) -> f64 {
        let warmup = self.warmup_steps();
        if step < warmup {
            return self.base_lr * (step + 1) as f64 / warmup as f64;
        }
        let span = self.total_steps.saturating_sub(1).saturating_sub(warmup).max(1);
        let progress = ((step - warmup) as f64 / span as f64).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.floor_lr + (self.base_lr - self.floor_lr) * cosine
    }
}

pub fn lr_at(step: u64, schedule: &LrSchedule) -> f64 {
    schedule.lr_at(step)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule: LrSchedule::default(),
        }
    }
}

/// Adam moments and step counter for one `ParamSet`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros = |p: &Tensor| Tensor::zeros(p.shape());
        Adam {
            config,
            first: params.values().iter().map(zeros).collect(),
            second: params.values().iter().map(zeros).collect(),
            step: 0,
        }
    }

    /// Number of accepted steps so far.
    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.config.schedule.lr_at(self.step)
    }

    /// Applies one bias-corrected update. Rejects the whole step, without
    /// touching parameters or moments, if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<(), NumError> {
        if grads.len() != self.first.len() || params.len() != self.first.len() {
            return Err(NumError::ParamCount {
                expected: self.first.len(),
                actual: grads.len().min(params.len()),
            });
        }
        for (k, (g, p)) in grads.iter().zip(params.values()).enumerate() {
            if g.shape() != p.shape() {
                return Err(NumError::Shape {
                    node: None,
                    detail: format!("gradient {k} {:?} vs parameter {:?}", g.shape(), p.shape()),
                });
            }
            if !g.is_finite() {
                return Err(NumError::NonFiniteGradient { param: k });
            }
        }
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let lr = self.config.schedule.lr_at(self.step);
        let t = (self.step + 1) as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (k, p) in params.values_mut().iter_mut().enumerate() {
            let g = grads[k].data();
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        self.step += 1;
        Ok(())
    }
}

/// Rescales gradients in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let f = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale_in_place(f));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.add("p", Tensor::scalar(v));
        p
    }

    fn no_decay(lr: f64) -> AdamConfig {
        AdamConfig {
            schedule: LrSchedule::constant(lr),
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = one_param(1.5);
        let mut adam = Adam::new(no_decay(1e-3), &p);
        adam.step(&mut p, &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(p.values()[0].data(), &[1.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = one_param(0.0);
        let mut adam = Adam::new(no_decay(1e-3), &p);
        adam.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
        assert!((p.values()[0].data()[0] + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = one_param(2.0);
        let mut adam = Adam::new(no_decay(1e-3), &p);
        let err = adam.step(&mut p, &[Tensor::scalar(f64::NAN)]).unwrap_err();
        assert_eq!(err, NumError::NonFiniteGradient { param: 0 });
        assert_eq!(adam.steps_taken(), 0);
        assert_eq!(p.values()[0].data(), &[2.0]);
    }

    #[test]
    fn quadratic_converges() {
        let mut p = one_param(0.0);
        let mut adam = Adam::new(no_decay(0.1), &p);
        for _ in 0..100 {
            let x = p.values()[0].data()[0];
            adam.step(&mut p, &[Tensor::scalar(2.0 * (x - 5.0))]).unwrap();
        }
        assert!((p.values()[0].data()[0] - 5.0).abs() < 0.5);
    }

    #[test]
    fn schedule_boundaries() {
        let s = LrSchedule {
            base_lr: 1e-3,
            floor_lr: 0.0,
            total_steps: 101,
            warmup_frac: 0.0,
        };
        assert_eq!(s.lr_at(0), 1e-3);
        assert!((s.lr_at(50) - 5e-4).abs() < 1e-15);
        assert!(s.lr_at(100).abs() < 1e-18);

        let floored = LrSchedule { floor_lr: 1e-5, ..s };
        assert_eq!(floored.lr_at(100), 1e-5);
        assert_eq!(floored.lr_at(5000), 1e-5);
    }

    #[test]
    fn warmup_reaches_base_then_decays() {
        let s = LrSchedule {
            base_lr: 1e-3,
            floor_lr: 1e-5,
            total_steps: 200,
            warmup_frac: 0.05,
        };
        assert_eq!(s.warmup_steps(), 10);
        assert!(s.lr_at(0) < s.lr_at(5));
        assert_eq!(s.lr_at(9), 1e-3);
        assert_eq!(s.lr_at(10), 1e-3);
        let mut prev = f64::INFINITY;
        for step in 10..250 {
            let lr = s.lr_at(step);
            assert!(lr <= prev && lr > 0.0);
            prev = lr;
        }
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![Tensor::column(vec![3.0, 4.0])];
        let before = clip_grad_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!((g[0].norm_sq().sqrt() - 1.0).abs() < 1e-12);
    }
}
