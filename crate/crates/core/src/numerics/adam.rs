//! Adam optimizer with bias correction and the two learning-rate schedules
//! used by the models here.

use crate::error::{Error, Result};
use crate::numerics::param::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// Linear warmup to `base` over `warmup` steps, then decay by
    /// sqrt(warmup / step).
    InverseSqrt { base: f64, warmup: u64 },
}

impl LrSchedule {
    pub fn rate(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::InverseSqrt { base, warmup } => {
                let t = step.max(1) as f64;
                let w = warmup.max(1) as f64;
                base * (t / w).min((w / t).sqrt())
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub schedule: LrSchedule,
}

impl AdamConfig {
    pub fn with_constant_lr(lr: f64) -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-8,
            schedule: LrSchedule::Constant(lr),
        }
    }

    pub fn with_warmup(base: f64, warmup: u64) -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-8,
            schedule: LrSchedule::InverseSqrt { base, warmup },
        }
    }
}

/// Per-parameter moment estimates; shapes mirror the parameter list.
pub struct AdamState {
    pub step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

pub struct Adam {
    pub cfg: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let first = store.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        let second = store.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Adam {
            cfg,
            state: AdamState {
                step_count: 0,
                first_moment: first,
                second_moment: second,
            },
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.cfg.schedule.rate(self.state.step_count.max(1))
    }

    /// One update. `grads[i]` pairs with parameter `i` of `store`; `None`
    /// leaves that parameter (and its moments) untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<&[f64]>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::InvalidArgument(format!(
                "adam_step: {} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        self.state.step_count += 1;
        let t = self.state.step_count;
        let lr = self.cfg.schedule.rate(t);
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.epsilon);
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);

        for i in 0..store.len() {
            let Some(grad) = grads[i] else { continue };
            if grad.iter().any(|v| !v.is_finite()) {
                let name = store.name(crate::numerics::param::ParamId(i)).to_string();
                return Err(Error::Training(format!(
                    "non-finite gradient for parameter {name}"
                )));
            }
            let m = &mut self.state.first_moment[i];
            let v = &mut self.state.second_moment[i];
            let p = store
                .value_mut(crate::numerics::param::ParamId(i))
                .data_mut();
            for j in 0..p.len() {
                let gj = grad[j];
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    fn single_param(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.register("w", Tensor::from_vec(vec![v])).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = single_param(1.5);
        let mut adam = Adam::new(AdamConfig::with_constant_lr(0.1), &store);
        let g = vec![0.0];
        adam.step(&mut store, &[Some(&g)]).unwrap();
        assert_eq!(store.tensors()[0].data(), &[1.5]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // After one step with gradient g, bias-corrected update is
        // -lr * g / (|g| + eps') which is within epsilon of -lr*sign(g).
        let mut store = single_param(0.0);
        let mut adam = Adam::new(AdamConfig::with_constant_lr(0.1), &store);
        let g = vec![2.5];
        adam.step(&mut store, &[Some(&g)]).unwrap();
        let w = store.tensors()[0].data()[0];
        assert!((w + 0.1).abs() < 1e-6, "w = {w}");
    }

    #[test]
    fn converges_on_quadratic() {
        // f(w) = (w-3)^2, df/dw = 2(w-3)
        let mut store = single_param(0.0);
        let mut adam = Adam::new(AdamConfig::with_constant_lr(0.1), &store);
        for _ in 0..100 {
            let w = store.tensors()[0].data()[0];
            let g = vec![2.0 * (w - 3.0)];
            adam.step(&mut store, &[Some(&g)]).unwrap();
        }
        let w = store.tensors()[0].data()[0];
        assert!((w - 3.0).abs() < 1e-2, "w = {w}");
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut store = single_param(0.0);
        let mut adam = Adam::new(AdamConfig::with_constant_lr(0.1), &store);
        let g = vec![f64::NAN];
        let err = adam.step(&mut store, &[Some(&g)]).unwrap_err();
        assert!(err.to_string().contains('w'), "{err}");
    }

    #[test]
    fn step_count_increments() {
        let mut store = single_param(0.0);
        let mut adam = Adam::new(AdamConfig::with_constant_lr(0.1), &store);
        for expect in 1..=5u64 {
            let g = vec![1.0];
            adam.step(&mut store, &[Some(&g)]).unwrap();
            assert_eq!(adam.state.step_count, expect);
        }
    }

    #[test]
    fn inverse_sqrt_schedule_shape() {
        let s = LrSchedule::InverseSqrt { base: 1e-3, warmup: 100 };
        assert!((s.rate(50) - 5e-4).abs() < 1e-12);
        assert!((s.rate(100) - 1e-3).abs() < 1e-12);
        assert!((s.rate(400) - 5e-4).abs() < 1e-12);
    }
}
