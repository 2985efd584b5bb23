use rand_distr::StandardNormal;
use rand::Rng as _;

use crate::rng::{self, Rng};
use crate::tensor::Tensor;
use crate::{Error, Result};

use super::model::EpsModel;
use super::schedule::{gaussian_like, predict_x0, SpacedSchedule};
use super::train::from_model_range;

/// Sampling-time correction of `x₀|t`. Inputs and outputs are batches
/// `[B, C, H, W]` in the model range `[−1, 1]`; `k` is the spaced step index.
pub trait Rectify {
    fn rectify(&mut self, x0t: &Tensor<f32>, k: usize) -> Result<Tensor<f32>>;
}

/// Reverse-process output: final images in `[0, 1]`, each `[C, H, W]`, and
/// optionally every rectified `x̂₀|t` (model range), latest step last.
#[derive(Clone, Debug)]
pub struct SampleOutput {
    pub images: Vec<Tensor<f32>>,
    pub trace: Vec<Tensor<f32>>,
}

fn clamp_unit(t: &Tensor<f32>) -> Tensor<f32> {
    t.map(|v| v.clamp(-1.0, 1.0))
}

/// Ancestral sampling over the spaced subsequence for a batch of images, one
/// seed per image. Each image draws its initial noise and per-step noise from
/// its own stream, so results do not depend on how images are batched.
pub fn sample_batch(
    model: &EpsModel,
    spaced: &SpacedSchedule,
    seeds: &[u64],
    mut rectifier: Option<&mut dyn Rectify>,
    keep_trace: bool,
) -> Result<SampleOutput> {
    if seeds.is_empty() {
        return Err(Error::Invalid("no images requested".into()));
    }
    if spaced.timesteps().last().is_some_and(|&t| t >= model.schedule.len()) {
        return Err(Error::Invalid("spaced schedule exceeds the model's T".into()));
    }
    let (h, w) = model.image_dims;
    let c = model.channels();
    let mut rngs: Vec<Rng> = seeds.iter().map(|&s| rng::seeded(s)).collect();
    let noise: Vec<Tensor<f32>> = rngs.iter_mut().map(|r| gaussian_like(&[c, h, w], r)).collect();
    let mut x = Tensor::stack(&noise)?;
    let per = c * h * w;
    let mut trace = Vec::new();
    for k in (0..spaced.len()).rev() {
        let ts = vec![spaced.timesteps()[k]; seeds.len()];
        let eps = model.predict(&x, &ts).map_err(|e| step_err(e, k))?;
        let mut x0 = clamp_unit(&predict_x0(&x, &eps, spaced.alpha_bar(k))?);
        if let Some(r) = rectifier.as_deref_mut() {
            x0 = clamp_unit(&r.rectify(&x0, k)?);
        }
        if !x0.is_finite() {
            return Err(Error::NonFinite { step: k, context: "rectified x0".into() });
        }
        let (c0, ct, sigma) = spaced.posterior_coefficients(k);
        let sigma = if k == 0 { 0.0 } else { sigma };
        let mut next = x0.zip_map(&x, |a, b| (c0 * f64::from(a) + ct * f64::from(b)) as f32)?;
        if sigma > 0.0 {
            for (item, r) in next.data_mut().chunks_mut(per).zip(rngs.iter_mut()) {
                for v in item {
                    let z: f64 = r.sample(StandardNormal);
                    *v = (f64::from(*v) + sigma * z) as f32;
                }
            }
        }
        if !next.is_finite() {
            return Err(Error::NonFinite { step: k, context: "x_{t-1}".into() });
        }
        if keep_trace {
            trace.push(x0);
        }
        x = next;
    }
    let out = from_model_range(&x).map(|v| v.clamp(0.0, 1.0));
    let images = (0..seeds.len())
        .map(|i| out.batch_item(i).and_then(|t| t.reshape(&[c, h, w])))
        .collect::<std::result::Result<_, _>>()?;
    Ok(SampleOutput { images, trace })
}

fn step_err(e: Error, k: usize) -> Error {
    match e {
        Error::Tensor(crate::TensorError::NonFinite { node, op }) => {
            Error::NonFinite { step: k, context: format!("eps network {op} at node {node}") }
        }
        other => other,
    }
}

/// One unconditional sample `[C, H, W]` in `[0, 1]`.
pub fn sample_unconditional(model: &EpsModel, spaced: &SpacedSchedule, seed: u64) -> Result<Tensor<f32>> {
    Ok(sample_batch(model, spaced, &[seed], None, false)?.images.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::model::EpsNetConfig;

    fn tiny() -> EpsModel {
        let cfg = EpsNetConfig { channels: 1, width1: 4, width2: 4, emb_dim: 8, hidden: 8 };
        EpsModel::new(cfg, 100, 1e-4, 0.02, (8, 8), &mut rng::seeded(3)).unwrap()
    }

    struct Shift(f32);

    impl Rectify for Shift {
        fn rectify(&mut self, x0t: &Tensor<f32>, _k: usize) -> Result<Tensor<f32>> {
            Ok(x0t.map(|v| v + self.0))
        }
    }

    #[test]
    fn deterministic_and_shaped() {
        let m = tiny();
        let sp = m.schedule.spaced(10).unwrap();
        let a = sample_unconditional(&m, &sp, 4).unwrap();
        let b = sample_unconditional(&m, &sp, 4).unwrap();
        assert_eq!(a.dims(), &[1, 8, 8]);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn batching_does_not_change_streams() {
        let m = tiny();
        let sp = m.schedule.spaced(5).unwrap();
        let both = sample_batch(&m, &sp, &[1, 2], None, false).unwrap();
        let single = sample_unconditional(&m, &sp, 2).unwrap();
        for (a, b) in both.images[1].data().iter().zip(single.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_rectifier_is_identity_and_trace_recorded() {
        let m = tiny();
        let sp = m.schedule.spaced(6).unwrap();
        let plain = sample_batch(&m, &sp, &[7], None, true).unwrap();
        let mut r = Shift(0.0);
        let rect = sample_batch(&m, &sp, &[7], Some(&mut r), true).unwrap();
        assert_eq!(plain.images, rect.images);
        assert_eq!(rect.trace.len(), 6);
        let mut r = Shift(0.5);
        let moved = sample_batch(&m, &sp, &[7], Some(&mut r), false).unwrap();
        assert_ne!(moved.images, plain.images);
    }
}
