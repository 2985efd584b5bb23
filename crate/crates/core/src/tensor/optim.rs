use serde::{Deserialize, Serialize};

use super::nn::ParamSet;
use super::{Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are kept in 64-bit.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    poisoned: bool,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet<f32>) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self { cfg, step: 0, m: zeros(), v: zeros(), poisoned: false }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Apply one update. A non-finite gradient poisons the optimizer and every
    /// later call fails as well.
    pub fn step(&mut self, params: &mut ParamSet<f32>, grads: &[Tensor<f32>]) -> Result<()> {
        if self.poisoned {
            return Err(TensorError::PoisonedState { param: usize::MAX });
        }
        if grads.len() != params.len() {
            return Err(TensorError::Invalid(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, (g, p)) in grads.iter().zip(params.tensors()).enumerate() {
            if g.dims() != p.dims() {
                return Err(TensorError::Invalid(format!(
                    "gradient {i} dims {:?} != parameter dims {:?}",
                    g.dims(),
                    p.dims()
                )));
            }
            if !g.is_finite() {
                self.poisoned = true;
                return Err(TensorError::PoisonedState { param: i });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (pv, gv)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                let g = f64::from(*gv);
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let update = lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
                *pv = (f64::from(*pv) - update) as f32;
            }
        }
        Ok(())
    }
}
