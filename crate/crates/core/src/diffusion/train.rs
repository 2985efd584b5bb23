use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::tensor::{Adam, AdamConfig, Element, Graph, NodeId, Reduction, Tensor, TensorError};
use crate::{Error, Result};

use super::model::EpsModel;
use super::schedule::gaussian_like;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub log_every: usize,
}

impl Default for EpsTrainConfig {
    fn default() -> Self {
        Self { steps: 20_000, batch: 16, lr: 2e-4, log_every: 500 }
    }
}

/// Map `[0, 1]` intensities to the diffusion range `[−1, 1]`.
pub fn to_model_range(x: &Tensor<f32>) -> Tensor<f32> {
    x.map(|v| 2.0 * v - 1.0)
}

pub fn from_model_range(x: &Tensor<f32>) -> Tensor<f32> {
    x.map(|v| (v + 1.0) * 0.5)
}

/// Builds `mean ‖ε − ε_θ(x_t, t)‖²` on `g` and returns the loss node.
pub fn eps_loss<E: Element>(
    model: &EpsModel,
    g: &mut Graph<E>,
    p: &crate::tensor::nn::Bound,
    x_t: NodeId,
    ts: &[usize],
    eps: NodeId,
) -> Result<NodeId> {
    let pred = model.net.forward(g, p, x_t, ts)?;
    Ok(g.mse_loss(pred, eps, Reduction::Mean)?)
}

/// One training minibatch: `(x_t, t, ε)` drawn from `images` (each `[C, H, W]`
/// in `[−1, 1]`).
pub fn draw_batch(model: &EpsModel, images: &[Tensor<f32>], batch: usize, r: &mut impl Rng) -> Result<(Tensor<f32>, Vec<usize>, Tensor<f32>)> {
    let t_total = model.schedule.len();
    let mut xs = Vec::with_capacity(batch);
    let mut ts = Vec::with_capacity(batch);
    let mut es = Vec::with_capacity(batch);
    for _ in 0..batch {
        let x0 = &images[r.random_range(0..images.len())];
        let t = r.random_range(0..t_total);
        let eps = gaussian_like(x0.dims(), r);
        xs.push(super::schedule::forward_sample(x0, t, &eps, &model.schedule)?);
        ts.push(t);
        es.push(eps);
    }
    Ok((Tensor::stack(&xs)?, ts, Tensor::stack(&es)?))
}

/// Train ε-prediction with Adam. `images` are `[C, H, W]` in `[−1, 1]`.
/// Returns the per-step loss curve.
pub fn train_eps_model(model: &mut EpsModel, images: &[Tensor<f32>], cfg: &EpsTrainConfig, seed: u64) -> Result<Vec<f64>> {
    if images.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let want = [model.channels(), model.image_dims.0, model.image_dims.1];
    if let Some(bad) = images.iter().find(|t| t.dims() != want) {
        return Err(Error::Shape(format!("training image {:?}, model expects {want:?}", bad.dims())));
    }
    let mut r = rng::seeded(seed);
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, &model.params);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (xt, ts, eps) = draw_batch(model, images, cfg.batch, &mut r)?;
        let mut g = Graph::<f32>::new();
        let p = model.params.bind(&mut g, true);
        let (xn, en) = (g.input(xt), g.input(eps));
        let loss = eps_loss(model, &mut g, &p, xn, &ts, en).map_err(|e| at_step(e, step))?;
        let lv = f64::from(g.value(loss).data()[0]);
        let grads = g.backward(loss).map_err(|e| at_step(e.into(), step))?;
        opt.step(&mut model.params, &p.grads(&g, &grads)).map_err(|e| at_step(e.into(), step))?;
        curve.push(lv);
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            log::info!("eps step {step}: loss {lv:.5}");
        }
    }
    Ok(curve)
}

/// Tag non-finite failures with the training step they occurred at.
pub(crate) fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { node, op }) => {
            Error::NonFinite { step, context: format!("{op} output at node {node}") }
        }
        Error::Tensor(TensorError::PoisonedState { param }) => {
            Error::NonFinite { step, context: format!("gradient of parameter {param}") }
        }
        other => other,
    }
}
