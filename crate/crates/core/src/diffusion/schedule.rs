use rand::Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Element, Tensor};
use crate::{Error, Result};

pub const DEFAULT_T: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_SAMPLING_STEPS: usize = 100;

/// Smallest `ᾱ` for which `x₀` may be predicted from `x_t`.
pub const MIN_ALPHA_BAR: f64 = 1e-12;

/// β and ᾱ tables, indexed `0..T` (index `i` is diffusion step `i + 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    /// Linear β from `beta_start` to `beta_end` over `t_total` steps.
    pub fn linear(t_total: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_total < 2 {
            return Err(Error::Invalid(format!("schedule needs T >= 2, got {t_total}")));
        }
        let betas = (0..t_total)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (t_total - 1) as f64)
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Invalid("empty beta table".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(Error::Invalid(format!("beta {b} outside [0, 1)")));
        }
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars
            .get(t)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("timestep {t} out of range 0..{}", self.len())))
    }

    /// Keep `n` timesteps, `round_half_up(linspace(0, T − 1, n))`, and respace β
    /// so that ᾱ is preserved at every kept step.
    pub fn spaced(&self, n: usize) -> Result<SpacedSchedule> {
        let t_total = self.len();
        if n == 0 || n > t_total {
            return Err(Error::Invalid(format!("cannot keep {n} of {t_total} timesteps")));
        }
        let mut timesteps: Vec<usize> = if n == 1 {
            vec![t_total - 1]
        } else {
            // floor(i (T−1)/(n−1) + 1/2) in exact integer arithmetic
            (0..n).map(|i| (2 * i * (t_total - 1) + (n - 1)) / (2 * (n - 1))).collect()
        };
        timesteps.dedup();
        let alpha_bars: Vec<f64> = timesteps.iter().map(|&t| self.alpha_bars[t]).collect();
        let betas = alpha_bars
            .iter()
            .enumerate()
            .map(|(k, &ab)| if k == 0 { 1.0 - ab } else { 1.0 - ab / alpha_bars[k - 1] })
            .collect();
        Ok(SpacedSchedule { timesteps, betas, alpha_bars })
    }
}

/// A kept subsequence of timesteps with respaced β′.
#[derive(Clone, Debug, PartialEq)]
pub struct SpacedSchedule {
    timesteps: Vec<usize>,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl SpacedSchedule {
    pub fn len(&self) -> usize {
        self.timesteps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timesteps.is_empty()
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k]
    }

    pub fn alpha_bar_prev(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.alpha_bars[k - 1]
        }
    }

    /// ᾱ recomputed as the running product of `1 − β′`.
    pub fn alpha_bars_from_betas(&self) -> Vec<f64> {
        let mut acc = 1.0;
        self.betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect()
    }

    /// Posterior coefficients `(c_x0, c_xt, σ)` at spaced index `k`.
    pub fn posterior_coefficients(&self, k: usize) -> (f64, f64, f64) {
        let ab = self.alpha_bar(k);
        let ab_prev = self.alpha_bar_prev(k);
        let beta = self.betas[k];
        let denom = 1.0 - ab;
        if denom <= 0.0 {
            // ᾱ_t = ᾱ_{t−1} = 1: the step is the identity.
            return (0.0, 1.0, 0.0);
        }
        let c_x0 = ab_prev.sqrt() * beta / denom;
        let c_xt = (1.0 - beta).sqrt() * (1.0 - ab_prev) / denom;
        let var = (1.0 - ab_prev) / denom * beta;
        (c_x0, c_xt, var.max(0.0).sqrt())
    }
}

/// `x_t = √ᾱ_t x₀ + √(1 − ᾱ_t) ε`.
pub fn forward_sample<E: Element>(x0: &Tensor<E>, t: usize, eps: &Tensor<E>, schedule: &DiffusionSchedule) -> Result<Tensor<E>> {
    let ab = schedule.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(eps, |x, e| E::of(a * x.as_f64() + b * e.as_f64()))
        .map_err(|e| Error::Shape(e.to_string()))
}

/// `x₀|t = (x_t − √(1 − ᾱ_t) ε̂) / √ᾱ_t`.
pub fn predict_x0<E: Element>(x_t: &Tensor<E>, eps_pred: &Tensor<E>, alpha_bar: f64) -> Result<Tensor<E>> {
    if !(alpha_bar >= MIN_ALPHA_BAR) {
        return Err(Error::Numerical(format!("alpha_bar {alpha_bar:e} below {MIN_ALPHA_BAR:e}")));
    }
    let (inv, b) = (1.0 / alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x_t.zip_map(eps_pred, |x, e| E::of((x.as_f64() - b * e.as_f64()) * inv))
        .map_err(|e| Error::Shape(e.to_string()))
}

/// One reverse step `x_{t−1} = μ(x_t, x̂₀) + σ z` at spaced index `k ≥ 0`;
/// the noise is dropped on the final step (`k == 0`).
pub fn posterior_step(
    x_t: &Tensor<f32>,
    x0_hat: &Tensor<f32>,
    k: usize,
    rng: &mut impl Rng,
    schedule: &SpacedSchedule,
) -> Result<Tensor<f32>> {
    let (c0, ct, sigma) = schedule.posterior_coefficients(k);
    let sigma = if k == 0 { 0.0 } else { sigma };
    let mut out = x0_hat
        .zip_map(x_t, |x0, xt| (c0 * f64::from(x0) + ct * f64::from(xt)) as f32)
        .map_err(|e| Error::Shape(e.to_string()))?;
    if sigma > 0.0 {
        for v in out.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = (f64::from(*v) + sigma * z) as f32;
        }
    }
    Ok(out)
}

pub fn gaussian_like(dims: &[usize], rng: &mut impl Rng) -> Tensor<f32> {
    Tensor::from_fn(dims, |_| rng.sample::<f64, _>(StandardNormal) as f32)
}
