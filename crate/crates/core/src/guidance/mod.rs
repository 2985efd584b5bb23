//! Sampling-time guidance: DDNM with an explicit operator, learned (implicit)
//! guidance with input perturbation and a guidance scalar, the explicit mode
//! driven by a kernel estimator, and the combination of an estimated `A` with
//! the learned `G_r`.
//!
//! Rectification happens in the image range `[0, 1]`; the reverse process runs
//! in `[−1, 1]`.

pub mod estimator;

use serde::{Deserialize, Serialize};

use crate::daware::DegradationPair;
use crate::diffusion::{sample_batch, EpsModel, Rectify, SampleOutput, SpacedSchedule};
use crate::linops::{build_avgpool_operator, build_conv_stride_operator, range_null_rectify_tensor, LinearOperator};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub use estimator::{train_kernel_estimator, EstimatorConfig, EstimatorTrainConfig, KernelEstimator};

pub const DEFAULT_ALPHA: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceMode {
    DdnmDefault,
    Implicit,
    Explicit,
    Combine,
}

impl GuidanceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GuidanceMode::DdnmDefault => "ddnm-default",
            GuidanceMode::Implicit => "implicit",
            GuidanceMode::Explicit => "explicit",
            GuidanceMode::Combine => "combine",
        }
    }
}

impl std::str::FromStr for GuidanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddnm-default" | "ddnm" => Ok(GuidanceMode::DdnmDefault),
            "implicit" => Ok(GuidanceMode::Implicit),
            "explicit" => Ok(GuidanceMode::Explicit),
            "combine" => Ok(GuidanceMode::Combine),
            other => Err(Error::Invalid(format!("unknown guidance mode {other}"))),
        }
    }
}

impl std::fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    pub alpha: f64,
    pub perturb: bool,
    pub seed: u64,
    pub steps: usize,
    pub scale: usize,
    /// Condition `G_r(y_perturb)` on `E(y_perturb)` instead of `E(y)`.
    pub rep_from_perturbed: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            mode: GuidanceMode::Implicit,
            alpha: DEFAULT_ALPHA,
            perturb: true,
            seed: 0,
            steps: crate::diffusion::schedule::DEFAULT_SAMPLING_STEPS,
            scale: 4,
            rep_from_perturbed: false,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Invalid(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.steps == 0 || self.scale == 0 {
            return Err(Error::Invalid("steps and scale must be at least 1".into()));
        }
        Ok(())
    }
}

fn to_unit(x: &Tensor<f32>) -> Tensor<f32> {
    x.map(|v| (v + 1.0) * 0.5)
}

fn to_model(u: &Tensor<f32>) -> Tensor<f32> {
    u.map(|v| 2.0 * v - 1.0)
}

/// `x0t + α (target − G_r(G_d(x0t, rep), rep))`.
pub fn dadiff_rectify(
    x0t: &Tensor<f32>,
    target: &Tensor<f32>,
    models: &dyn DegradationPair,
    rep: &Tensor<f32>,
    alpha: f64,
) -> Result<Tensor<f32>> {
    let back = models.apply_gr(&models.apply_gd(x0t, rep)?, rep)?;
    guided_update(x0t, target, &back, alpha)
}

fn guided_update(x0t: &Tensor<f32>, target: &Tensor<f32>, back: &Tensor<f32>, alpha: f64) -> Result<Tensor<f32>> {
    if target.dims() != x0t.dims() || back.dims() != x0t.dims() {
        return Err(Error::Shape(format!(
            "guidance target {:?} / reconstruction {:?} vs x0 {:?}",
            target.dims(),
            back.dims(),
            x0t.dims()
        )));
    }
    let diff = target.zip_map(back, |t, b| (f64::from(t) - f64::from(b)) as f32)?;
    Ok(x0t.zip_map(&diff, |x, d| (f64::from(x) + alpha * f64::from(d)) as f32)?)
}

/// `G_d(G_r(y, rep), rep)`.
pub fn perturb_input(y: &Tensor<f32>, models: &dyn DegradationPair, rep: &Tensor<f32>) -> Result<Tensor<f32>> {
    let out = models.apply_gd(&models.apply_gr(y, rep)?, rep)?;
    if out.dims() != y.dims() {
        return Err(Error::Shape(format!("perturbed input {:?} vs y {:?}", out.dims(), y.dims())));
    }
    Ok(out)
}

/// Quantities fixed for a whole guided run.
#[derive(Clone, Debug)]
pub struct GuidanceInputs {
    /// `E(y)`, used for every `G_d` / `G_r` call on `x₀|t`.
    pub rep: Tensor<f32>,
    /// The observation the guidance targets: `y` or `y_perturb`.
    pub y_used: Tensor<f32>,
    /// `G_r(y_used, ·)`.
    pub target: Tensor<f32>,
}

pub fn prepare_guidance(
    y: &Tensor<f32>,
    models: &dyn DegradationPair,
    perturb: bool,
    rep_from_perturbed: bool,
) -> Result<GuidanceInputs> {
    let rep = models.encode(y)?;
    let y_used = if perturb { perturb_input(y, models, &rep)? } else { y.clone() };
    let target_rep = if perturb && rep_from_perturbed { models.encode(&y_used)? } else { rep.clone() };
    let target = models.apply_gr(&y_used, &target_rep)?;
    Ok(GuidanceInputs { rep, y_used, target })
}

/// Range-null rectification with one operator per batch item.
pub struct DdnmRectifier<'a> {
    ys: Tensor<f32>,
    ops: Vec<&'a LinearOperator>,
}

impl<'a> DdnmRectifier<'a> {
    pub fn new(ys: Tensor<f32>, ops: Vec<&'a LinearOperator>) -> Result<Self> {
        if ys.dims().first() != Some(&ops.len()) {
            return Err(Error::Shape(format!("{} operators for observations {:?}", ops.len(), ys.dims())));
        }
        Ok(Self { ys, ops })
    }
}

impl Rectify for DdnmRectifier<'_> {
    fn rectify(&mut self, x0t: &Tensor<f32>, _k: usize) -> Result<Tensor<f32>> {
        let u = to_unit(x0t);
        let items = (0..self.ops.len())
            .map(|i| Ok(range_null_rectify_tensor(&u.batch_item(i)?, &self.ys.batch_item(i)?, self.ops[i])?))
            .collect::<Result<Vec<_>>>()?;
        Ok(to_model(&Tensor::concat_batch(&items)?))
    }
}

/// Learned guidance; with `ops` set, the estimated operators stand in for
/// `G_d` (combine mode).
pub struct LearnedRectifier<'a> {
    models: &'a dyn DegradationPair,
    inputs: GuidanceInputs,
    alpha: f64,
    ops: Option<Vec<&'a LinearOperator>>,
}

impl<'a> LearnedRectifier<'a> {
    pub fn implicit(models: &'a dyn DegradationPair, inputs: GuidanceInputs, alpha: f64) -> Self {
        Self { models, inputs, alpha, ops: None }
    }

    pub fn combined(models: &'a dyn DegradationPair, inputs: GuidanceInputs, alpha: f64, ops: Vec<&'a LinearOperator>) -> Self {
        Self { models, inputs, alpha, ops: Some(ops) }
    }
}

impl Rectify for LearnedRectifier<'_> {
    fn rectify(&mut self, x0t: &Tensor<f32>, _k: usize) -> Result<Tensor<f32>> {
        let u = to_unit(x0t);
        let rep = &self.inputs.rep;
        let out = match &self.ops {
            None => dadiff_rectify(&u, &self.inputs.target, self.models, rep, self.alpha)?,
            Some(ops) => {
                let degraded = (0..ops.len())
                    .map(|i| Ok(ops[i].apply_tensor(&u.batch_item(i)?)?))
                    .collect::<Result<Vec<_>>>()?;
                let back = self.models.apply_gr(&Tensor::concat_batch(&degraded)?, rep)?;
                guided_update(&u, &self.inputs.target, &back, self.alpha)?
            }
        };
        Ok(to_model(&out))
    }
}

fn seeds_match(ys: &Tensor<f32>, seeds: &[u64]) -> Result<()> {
    if ys.dims().len() != 4 || ys.dims()[0] != seeds.len() {
        return Err(Error::Shape(format!("observations {:?} vs {} seeds", ys.dims(), seeds.len())));
    }
    Ok(())
}

/// DDNM: range-null rectification of `x₀|t` at every step.
pub fn ddnm_sample(
    eps: &EpsModel,
    spaced: &SpacedSchedule,
    ys: &Tensor<f32>,
    ops: &[&LinearOperator],
    seeds: &[u64],
    keep_trace: bool,
) -> Result<SampleOutput> {
    seeds_match(ys, seeds)?;
    let mut r = DdnmRectifier::new(ys.clone(), ops.to_vec())?;
    sample_batch(eps, spaced, seeds, Some(&mut r), keep_trace)
}

/// Learned guidance with optional input perturbation. `alpha == 0` runs the
/// unguided sampler.
pub fn dadiff_sample(
    eps: &EpsModel,
    spaced: &SpacedSchedule,
    ys: &Tensor<f32>,
    models: &dyn DegradationPair,
    cfg: &GuidanceConfig,
    seeds: &[u64],
    keep_trace: bool,
) -> Result<SampleOutput> {
    cfg.validate()?;
    seeds_match(ys, seeds)?;
    if cfg.alpha == 0.0 {
        return sample_batch(eps, spaced, seeds, None, keep_trace);
    }
    let inputs = prepare_guidance(ys, models, cfg.perturb, cfg.rep_from_perturbed)?;
    let mut r = LearnedRectifier::implicit(models, inputs, cfg.alpha);
    sample_batch(eps, spaced, seeds, Some(&mut r), keep_trace)
}

/// Estimated `A` in place of `G_d`, learned `G_r` as the inverse.
#[allow(clippy::too_many_arguments)]
pub fn combine_sample(
    eps: &EpsModel,
    spaced: &SpacedSchedule,
    ys: &Tensor<f32>,
    models: &dyn DegradationPair,
    ops: &[&LinearOperator],
    cfg: &GuidanceConfig,
    seeds: &[u64],
    keep_trace: bool,
) -> Result<SampleOutput> {
    cfg.validate()?;
    seeds_match(ys, seeds)?;
    if ops.len() != seeds.len() {
        return Err(Error::Shape(format!("{} operators for {} images", ops.len(), seeds.len())));
    }
    if cfg.alpha == 0.0 {
        return sample_batch(eps, spaced, seeds, None, keep_trace);
    }
    let inputs = prepare_guidance(ys, models, cfg.perturb, cfg.rep_from_perturbed)?;
    let mut r = LearnedRectifier::combined(models, inputs, cfg.alpha, ops.to_vec());
    sample_batch(eps, spaced, seeds, Some(&mut r), keep_trace)
}

/// Strided-blur operators built from the estimator's kernels for each item of
/// `ys` (`[B, C, h, w]`).
pub fn estimated_operators(
    est: &KernelEstimator,
    ys: &Tensor<f32>,
    scale: usize,
    hr_dims: (usize, usize),
) -> Result<Vec<LinearOperator>> {
    let kernels = est.predict(ys)?;
    kernels.iter().map(|k| Ok(build_conv_stride_operator(k, scale, hr_dims)?)).collect()
}

/// Trained components a guided run may draw on.
pub struct Models<'a> {
    pub eps: &'a EpsModel,
    pub daware: Option<&'a dyn DegradationPair>,
    pub estimator: Option<&'a KernelEstimator>,
}

/// Restore a batch of LR observations `[B, C, h, w]` in `[0, 1]` with the
/// configured mode; one seed per image.
pub fn restore(models: &Models<'_>, ys: &Tensor<f32>, cfg: &GuidanceConfig, seeds: &[u64]) -> Result<SampleOutput> {
    cfg.validate()?;
    let spaced = models.eps.schedule.spaced(cfg.steps)?;
    let hr = models.eps.image_dims;
    let need_daware = || models.daware.ok_or_else(|| Error::Invalid(format!("mode {} needs degradation-aware models", cfg.mode)));
    let need_est = || models.estimator.ok_or_else(|| Error::Invalid(format!("mode {} needs a kernel estimator", cfg.mode)));
    match cfg.mode {
        GuidanceMode::DdnmDefault => {
            let op = build_avgpool_operator(cfg.scale, hr)?;
            let ops = vec![&op; seeds.len()];
            ddnm_sample(models.eps, &spaced, ys, &ops, seeds, false)
        }
        GuidanceMode::Implicit => dadiff_sample(models.eps, &spaced, ys, need_daware()?, cfg, seeds, false),
        GuidanceMode::Explicit => {
            let owned = estimated_operators(need_est()?, ys, cfg.scale, hr)?;
            let ops: Vec<&LinearOperator> = owned.iter().collect();
            ddnm_sample(models.eps, &spaced, ys, &ops, seeds, false)
        }
        GuidanceMode::Combine => {
            let owned = estimated_operators(need_est()?, ys, cfg.scale, hr)?;
            let ops: Vec<&LinearOperator> = owned.iter().collect();
            combine_sample(models.eps, &spaced, ys, need_daware()?, &ops, cfg, seeds, false)
        }
    }
}
