use std::f64::consts::PI;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// SGD with heavy-ball momentum and L2 weight decay added to the gradient.
pub struct Sgd {
    vars: Vec<Var>,
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<Option<Tensor>>,
}

impl Sgd {
    pub fn new(vars: Vec<Var>, momentum: f64, weight_decay: f64) -> Self {
        let velocity = vec![None; vars.len()];
        Self {
            vars,
            momentum,
            weight_decay,
            velocity,
        }
    }

    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        for (var, velocity) in self.vars.iter().zip(self.velocity.iter_mut()) {
            let Some(grad) = grads.get(var.as_tensor()) else {
                continue;
            };
            let param = var.as_tensor().detach();
            let mut g = grad.detach();
            if self.weight_decay != 0.0 {
                g = (g + (&param * self.weight_decay)?)?;
            }
            let v = match velocity.take() {
                Some(prev) if self.momentum != 0.0 => ((prev * self.momentum)? + g)?,
                _ => g,
            };
            var.set(&(param - (&v * lr)?)?)?;
            *velocity = Some(v);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    /// Two-phase cosine one-cycle: warm up over the first 30% of steps from
    /// `peak / 25` to `peak`, then anneal to `peak / 25e4`.
    OneCycle {
        peak: f64,
    },
    /// Cosine annealing with warm restarts every `period` epochs.
    CosineWarmRestart {
        peak: f64,
        min: f64,
        period: f64,
    },
}

impl LrSchedule {
    /// Learning rate at `step` out of `total_steps`, with `steps_per_epoch`
    /// steps in one epoch.
    pub fn lr_at(&self, step: usize, total_steps: usize, steps_per_epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::OneCycle { peak } => {
                let initial = peak / 25.0;
                let last = initial / 1e4;
                let total = total_steps.max(2) as f64;
                let warm = (0.3 * total - 1.0).max(1.0);
                let s = step as f64;
                let anneal = |from: f64, to: f64, pct: f64| to + (from - to) * (1.0 + (PI * pct).cos()) / 2.0;
                if s <= warm {
                    anneal(initial, peak, s / warm)
                } else {
                    anneal(peak, last, ((s - warm) / (total - 1.0 - warm)).min(1.0))
                }
            }
            LrSchedule::CosineWarmRestart { peak, min, period } => {
                let epoch = step as f64 / steps_per_epoch.max(1) as f64;
                let t = epoch % period;
                min + (peak - min) * (1.0 + (PI * t / period).cos()) / 2.0
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn one_cycle_shape() {
        let s = LrSchedule::OneCycle { peak: 0.1 };
        let total = 1000;
        assert!((s.lr_at(0, total, 10) - 0.004).abs() < 1e-12);
        assert!((s.lr_at(299, total, 10) - 0.1).abs() < 1e-12);
        assert!(s.lr_at(999, total, 10) < 1e-6);
        assert!(s.lr_at(150, total, 10) < s.lr_at(250, total, 10));
    }

    #[test]
    fn warm_restart_period() {
        let s = LrSchedule::CosineWarmRestart { peak: 0.01, min: 0.0, period: 20.0 };
        assert!((s.lr_at(0, 0, 100) - 0.01).abs() < 1e-15);
        assert!((s.lr_at(1000, 0, 100) - 0.005).abs() < 1e-12);
        assert!((s.lr_at(2000, 0, 100) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_and_decay() {
        let var = Var::from_tensor(&Tensor::new(&[1.0f64], &Device::Cpu).unwrap()).unwrap();
        let mut opt = Sgd::new(vec![var.clone()], 0.5, 0.1);
        for _ in 0..2 {
            let loss = (var.as_tensor() * 2.0).unwrap().sum_all().unwrap();
            let grads = loss.backward().unwrap();
            opt.step(&grads, 0.1).unwrap();
        }
        // step 1: g = 2 + 0.1 = 2.1, p = 0.79; step 2: g = 2.079, v = 1.05 + 2.079
        let p = var.as_tensor().to_dtype(DType::F64).unwrap().to_vec1::<f64>().unwrap()[0];
        assert!((p - (0.79 - 0.1 * 3.129)).abs() < 1e-12);
    }
}
