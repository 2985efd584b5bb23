//! Explicit kernel estimator: LR image → `K x K` blur kernel.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::degradation::{PairedDataset, MAX_KERNEL_SIZE};
use crate::eval::archive::TensorArchive;
use crate::linops::Kernel2d;
use crate::rng;
use crate::tensor::nn::{Bound, Conv2d, Dense, ParamSet, LEAKY_SLOPE};
use crate::tensor::{conv_output_len, Adam, AdamConfig, Element, Graph, NodeId, Reduction, Tensor};
use crate::{Error, Result};

pub const ESTIMATOR_ARCH_VERSION: &str = "kernel-est-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub channels: usize,
    pub kernel_size: usize,
    pub hidden: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { channels: 1, kernel_size: MAX_KERNEL_SIZE, hidden: 128 }
    }
}

#[derive(Clone, Debug)]
pub struct KernelEstimator {
    cfg: EstimatorConfig,
    lr_dims: (usize, usize),
    c1: Conv2d,
    c2: Conv2d,
    f1: Dense,
    f2: Dense,
    flat: usize,
    pub params: ParamSet<f32>,
}

impl KernelEstimator {
    pub fn new(cfg: EstimatorConfig, lr_dims: (usize, usize), rng: &mut impl Rng) -> Result<Self> {
        if cfg.kernel_size % 2 == 0 {
            return Err(Error::Invalid(format!("kernel size {} must be odd", cfg.kernel_size)));
        }
        let (Some(h2), Some(w2)) = (conv_output_len(lr_dims.0, 3, 2, 1), conv_output_len(lr_dims.1, 3, 2, 1)) else {
            return Err(Error::Shape(format!("LR dims {lr_dims:?} too small for the estimator")));
        };
        let mut ps = ParamSet::new();
        let c1 = Conv2d::same3(&mut ps, rng, "est.c1", cfg.channels, 16);
        let c2 = Conv2d::new(&mut ps, rng, "est.c2", 16, 32, 3, 2, 1);
        let flat = 32 * h2 * w2;
        let f1 = Dense::new(&mut ps, rng, "est.f1", flat, cfg.hidden);
        let f2 = Dense::new(&mut ps, rng, "est.f2", cfg.hidden, cfg.kernel_size * cfg.kernel_size);
        Ok(Self { cfg, lr_dims, c1, c2, f1, f2, flat, params: ps })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    pub fn lr_dims(&self) -> (usize, usize) {
        self.lr_dims
    }

    /// Raw `[N, K²]` output for `y` of dims `[N, C, h, w]`.
    pub fn forward<E: Element>(&self, g: &mut Graph<E>, p: &Bound, y: NodeId) -> Result<NodeId> {
        let d = g.dims(y).to_vec();
        if d.len() != 4 || d[1] != self.cfg.channels || (d[2], d[3]) != self.lr_dims {
            return Err(Error::Shape(format!(
                "estimator expects [N, {}, {}, {}], got {d:?}",
                self.cfg.channels, self.lr_dims.0, self.lr_dims.1
            )));
        }
        let h = self.c1.forward(g, p, y)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE)?;
        let h = self.c2.forward(g, p, h)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE)?;
        let h = g.reshape(h, &[d[0], self.flat])?;
        let h = self.f1.forward(g, p, h)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE)?;
        Ok(self.f2.forward(g, p, h)?)
    }

    /// `mean ‖k − Ɛ(y)‖₁` against zero-embedded ground-truth kernels `[N, K²]`.
    pub fn loss_node<E: Element>(&self, g: &mut Graph<E>, p: &Bound, y: NodeId, k: NodeId) -> Result<NodeId> {
        let pred = self.forward(g, p, y)?;
        Ok(g.l1_loss(pred, k, Reduction::Mean)?)
    }

    /// Raw predictions, one `K²` vector per batch item.
    pub fn predict_raw(&self, y: &Tensor<f32>) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::<f32>::new();
        let p = self.params.bind(&mut g, false);
        let yn = g.input(y.clone());
        let out = self.forward(&mut g, &p, yn)?;
        let kk = self.cfg.kernel_size * self.cfg.kernel_size;
        Ok(g.value(out).data().chunks(kk).map(|c| c.iter().map(|&v| f64::from(v)).collect()).collect())
    }

    /// Estimated kernels, clamped to be non-negative and renormalised to unit
    /// sum. A prediction with no positive mass falls back to the delta kernel.
    pub fn predict(&self, y: &Tensor<f32>) -> Result<Vec<Kernel2d>> {
        self.predict_raw(y)?.into_iter().map(|raw| normalize_kernel(self.cfg.kernel_size, &raw)).collect()
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut a = TensorArchive::new();
        for (name, t) in self.params.iter() {
            a.insert(name, t.clone())?;
        }
        a.set_meta("kind", "kernel-estimator")?;
        a.set_meta("arch-version", ESTIMATOR_ARCH_VERSION)?;
        a.set_meta("channels", self.cfg.channels)?;
        a.set_meta("kernel-size", self.cfg.kernel_size)?;
        a.set_meta("hidden", self.cfg.hidden)?;
        a.set_meta("lr-dims", format!("{}x{}", self.lr_dims.0, self.lr_dims.1))?;
        Ok(a)
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self> {
        if a.meta("arch-version") != Some(ESTIMATOR_ARCH_VERSION) {
            return Err(Error::Invalid(format!("not a kernel-estimator checkpoint ({:?})", a.meta("arch-version"))));
        }
        let cfg = EstimatorConfig {
            channels: a.meta_parse("channels")?,
            kernel_size: a.meta_parse("kernel-size")?,
            hidden: a.meta_parse("hidden")?,
        };
        let dims = crate::diffusion::model::parse_dims(a.meta("lr-dims").unwrap_or_default())?;
        let mut m = Self::new(cfg, dims, &mut rng::seeded(0))?;
        m.params.load_from(|n| a.get(n))?;
        Ok(m)
    }
}

pub fn normalize_kernel(size: usize, raw: &[f64]) -> Result<Kernel2d> {
    let clamped: Vec<f64> = raw.iter().map(|&v| v.max(0.0)).collect();
    let s: f64 = clamped.iter().sum();
    if !(s > 0.0) || !s.is_finite() {
        return Ok(Kernel2d::delta(size)?);
    }
    Ok(Kernel2d::new(size, clamped.into_iter().map(|v| v / s).collect())?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub log_every: usize,
}

impl Default for EstimatorTrainConfig {
    fn default() -> Self {
        Self { steps: 5_000, batch: 16, lr: 2e-4, log_every: 500 }
    }
}

/// Zero-embedded ground-truth kernels of `ds` as `[K²]` vectors.
pub fn embedded_targets(ds: &PairedDataset, k: usize) -> Vec<Tensor<f32>> {
    ds.kernels
        .iter()
        .map(|kern| {
            let w = kern.embedded(k);
            Tensor::from_fn(&[k * k], |i| w[i] as f32)
        })
        .collect()
}

/// Minimise the L1 kernel loss; returns the per-step curve.
pub fn train_kernel_estimator(
    est: &mut KernelEstimator,
    ds: &PairedDataset,
    cfg: &EstimatorTrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if ds.is_empty() {
        return Err(Error::Invalid("kernel estimator needs a nonempty dataset".into()));
    }
    let targets = embedded_targets(ds, est.cfg.kernel_size);
    let mut r = rng::seeded(seed);
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, &est.params);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch).map(|_| r.random_range(0..ds.len())).collect();
        let ys = Tensor::stack(&idx.iter().map(|&i| ds.lr[i].clone()).collect::<Vec<_>>())?;
        let ks = Tensor::stack(&idx.iter().map(|&i| targets[i].clone()).collect::<Vec<_>>())?;
        let mut g = Graph::<f32>::new();
        let p = est.params.bind(&mut g, true);
        let (yn, kn) = (g.input(ys), g.input(ks));
        let tag = |e: Error| crate::diffusion::train::at_step(e, step);
        let loss = est.loss_node(&mut g, &p, yn, kn).map_err(tag)?;
        let lv = f64::from(g.value(loss).data()[0]);
        let grads = g.backward(loss).map_err(|e| tag(e.into()))?;
        opt.step(&mut est.params, &p.grads(&g, &grads)).map_err(|e| tag(e.into()))?;
        curve.push(lv);
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            log::info!("kernel estimator step {step}: loss {lv:.6}");
        }
    }
    Ok(curve)
}
