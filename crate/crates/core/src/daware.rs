//! Degradation-aware models: encoder `E`, degradation model `G_d` and
//! restoration model `G_r`, their joint training, and an exact linear stand-in
//! that exposes `A` and `A†` through the same interface.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::eval::archive::TensorArchive;
use crate::linops::LinearOperator;
use crate::rng;
use crate::tensor::nn::{Bound, Conv2d, ParamSet, LEAKY_SLOPE};
use crate::tensor::{Adam, AdamConfig, Element, Graph, NodeId, Reduction, Tensor};
use crate::{Error, Result};

pub const DAWARE_ARCH_VERSION: &str = "daware-concat-1";
pub const DEFAULT_CONSISTENCY_WEIGHT: f64 = 0.1;

/// Common call shape of learned and exact degradation/restoration pairs.
/// Images are `[N, C, h, w]` (LR) and `[N, C, H, W]` (HR) in `[0, 1]`.
pub trait DegradationPair {
    fn scale(&self) -> usize;
    fn encode(&self, y: &Tensor<f32>) -> Result<Tensor<f32>>;
    fn apply_gd(&self, x: &Tensor<f32>, rep: &Tensor<f32>) -> Result<Tensor<f32>>;
    fn apply_gr(&self, y: &Tensor<f32>, rep: &Tensor<f32>) -> Result<Tensor<f32>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DawareConfig {
    pub channels: usize,
    pub scale: usize,
    pub rep_dim: usize,
    pub width: usize,
}

impl Default for DawareConfig {
    fn default() -> Self {
        Self { channels: 1, scale: 4, rep_dim: 8, width: 32 }
    }
}

#[derive(Clone, Debug)]
struct Layers {
    e1: Conv2d,
    e2: Conv2d,
    e3: Conv2d,
    d1: Conv2d,
    d2: Conv2d,
    d3: Conv2d,
    d4: Conv2d,
    r1: Conv2d,
    r2: Conv2d,
    r3: Conv2d,
    r4: Conv2d,
}

/// Learned `E`, `G_d`, `G_r` sharing one parameter set.
#[derive(Clone, Debug)]
pub struct DegradationAwareModels {
    cfg: DawareConfig,
    layers: Layers,
    pub params: ParamSet<f32>,
}

/// Loss nodes of one joint-training evaluation.
#[derive(Clone, Copy, Debug)]
pub struct JointLoss {
    pub total: NodeId,
    pub degradation: NodeId,
    pub restoration: NodeId,
    pub consistency: NodeId,
}

impl DegradationAwareModels {
    pub fn new(cfg: DawareConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.scale == 0 || cfg.channels == 0 || cfg.rep_dim == 0 || cfg.width == 0 {
            return Err(Error::Invalid(format!("degenerate degradation-aware config {cfg:?}")));
        }
        let (c, r, w, s) = (cfg.channels, cfg.rep_dim, cfg.width, cfg.scale);
        let mut ps = ParamSet::new();
        let layers = Layers {
            e1: Conv2d::same3(&mut ps, rng, "enc.1", c, 16),
            e2: Conv2d::same3(&mut ps, rng, "enc.2", 16, 32),
            e3: Conv2d::same3(&mut ps, rng, "enc.3", 32, r),
            d1: Conv2d::same3(&mut ps, rng, "gd.1", c, w),
            d2: Conv2d::new(&mut ps, rng, "gd.2", w, w, s, s, 0),
            d3: Conv2d::same3(&mut ps, rng, "gd.3", w + r, w),
            d4: Conv2d::same3(&mut ps, rng, "gd.4", w, c),
            r1: Conv2d::same3(&mut ps, rng, "gr.1", c + r, w),
            r2: Conv2d::same3(&mut ps, rng, "gr.2", w, w),
            r3: Conv2d::same3(&mut ps, rng, "gr.3", w, w),
            r4: Conv2d::same3(&mut ps, rng, "gr.4", w, c),
        };
        Ok(Self { cfg, layers, params: ps })
    }

    pub fn config(&self) -> &DawareConfig {
        &self.cfg
    }

    fn conv_act<E: Element>(g: &mut Graph<E>, p: &Bound, conv: &Conv2d, x: NodeId) -> Result<NodeId> {
        let h = conv.forward(g, p, x)?;
        Ok(g.leaky_relu(h, LEAKY_SLOPE)?)
    }

    pub fn encode_node<E: Element>(&self, g: &mut Graph<E>, p: &Bound, y: NodeId) -> Result<NodeId> {
        let l = &self.layers;
        let h = Self::conv_act(g, p, &l.e1, y)?;
        let h = Self::conv_act(g, p, &l.e2, h)?;
        Ok(l.e3.forward(g, p, h)?)
    }

    pub fn gd_node<E: Element>(&self, g: &mut Graph<E>, p: &Bound, x: NodeId, rep: NodeId) -> Result<NodeId> {
        let l = &self.layers;
        let h = Self::conv_act(g, p, &l.d1, x)?;
        let h = Self::conv_act(g, p, &l.d2, h)?;
        let h = g.concat_channels(&[h, rep])?;
        let h = Self::conv_act(g, p, &l.d3, h)?;
        Ok(l.d4.forward(g, p, h)?)
    }

    pub fn gr_node<E: Element>(&self, g: &mut Graph<E>, p: &Bound, y: NodeId, rep: NodeId) -> Result<NodeId> {
        let l = &self.layers;
        let h = g.concat_channels(&[y, rep])?;
        let h = Self::conv_act(g, p, &l.r1, h)?;
        let h = Self::conv_act(g, p, &l.r2, h)?;
        let h = g.upsample_nearest(h, self.cfg.scale)?;
        let h = Self::conv_act(g, p, &l.r3, h)?;
        Ok(l.r4.forward(g, p, h)?)
    }

    /// `‖y − G_d(G_r(y, r), r)‖₁` (mean) with `r = E(y)` given as a node.
    pub fn consistency_node<E: Element>(&self, g: &mut Graph<E>, p: &Bound, y: NodeId, rep: NodeId) -> Result<NodeId> {
        let xr = self.gr_node(g, p, y, rep)?;
        let yc = self.gd_node(g, p, xr, rep)?;
        Ok(g.l1_loss(yc, y, Reduction::Mean)?)
    }

    /// `‖y − G_d(x, E y)‖₁ + ‖x − G_r(y, E y)‖₁ + w · L_c`, all mean-reduced.
    pub fn joint_loss_node<E: Element>(
        &self,
        g: &mut Graph<E>,
        p: &Bound,
        x: NodeId,
        y: NodeId,
        consistency_weight: f64,
    ) -> Result<JointLoss> {
        let rep = self.encode_node(g, p, y)?;
        let yd = self.gd_node(g, p, x, rep)?;
        let degradation = g.l1_loss(yd, y, Reduction::Mean)?;
        let xr = self.gr_node(g, p, y, rep)?;
        let restoration = g.l1_loss(xr, x, Reduction::Mean)?;
        let yc = self.gd_node(g, p, xr, rep)?;
        let consistency = g.l1_loss(yc, y, Reduction::Mean)?;
        let pix = g.add(degradation, restoration)?;
        let wc = g.scale(consistency, consistency_weight)?;
        let total = g.add(pix, wc)?;
        Ok(JointLoss { total, degradation, restoration, consistency })
    }

    fn check_channels(&self, y: &Tensor<f32>) -> Result<()> {
        match *y.dims() {
            [_, c, _, _] if c == self.cfg.channels => Ok(()),
            ref d => Err(Error::Shape(format!("expected [N, {}, h, w], got {d:?}", self.cfg.channels))),
        }
    }

    fn check_rep(&self, img: &Tensor<f32>, rep: &Tensor<f32>, down: usize) -> Result<()> {
        let (d, r) = (img.dims(), rep.dims());
        let ok = r.len() == 4
            && r[0] == d[0]
            && r[1] == self.cfg.rep_dim
            && d[2] % down == 0
            && d[3] % down == 0
            && r[2] == d[2] / down
            && r[3] == d[3] / down;
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("representation {r:?} does not match image {d:?} at scale {down}")))
        }
    }

    pub fn consistency_loss(&self, y: &Tensor<f32>) -> Result<f64> {
        self.check_channels(y)?;
        let mut g = Graph::<f32>::new();
        let p = self.params.bind(&mut g, false);
        let yn = g.input(y.clone());
        let rep = self.encode_node(&mut g, &p, yn)?;
        let l = self.consistency_node(&mut g, &p, yn, rep)?;
        Ok(f64::from(g.value(l).data()[0]))
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut a = TensorArchive::new();
        for (name, t) in self.params.iter() {
            a.insert(name, t.clone())?;
        }
        a.set_meta("kind", "daware")?;
        a.set_meta("arch-version", DAWARE_ARCH_VERSION)?;
        a.set_meta("scale", self.cfg.scale)?;
        a.set_meta("channels", self.cfg.channels)?;
        a.set_meta("rep-dim", self.cfg.rep_dim)?;
        a.set_meta("width", self.cfg.width)?;
        Ok(a)
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self> {
        if a.meta("arch-version") != Some(DAWARE_ARCH_VERSION) {
            return Err(Error::Invalid(format!("not a degradation-aware checkpoint ({:?})", a.meta("arch-version"))));
        }
        let cfg = DawareConfig {
            channels: a.meta_parse("channels")?,
            scale: a.meta_parse("scale")?,
            rep_dim: a.meta_parse("rep-dim")?,
            width: a.meta_parse("width")?,
        };
        let mut m = Self::new(cfg, &mut rng::seeded(0))?;
        m.params.load_from(|n| a.get(n))?;
        Ok(m)
    }

    fn run(&self, f: impl FnOnce(&Self, &mut Graph<f32>, &Bound) -> Result<NodeId>) -> Result<Tensor<f32>> {
        let mut g = Graph::<f32>::new();
        let p = self.params.bind(&mut g, false);
        let out = f(self, &mut g, &p)?;
        Ok(g.value(out).clone())
    }
}

impl DegradationPair for DegradationAwareModels {
    fn scale(&self) -> usize {
        self.cfg.scale
    }

    fn encode(&self, y: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_channels(y)?;
        self.run(|m, g, p| {
            let yn = g.input(y.clone());
            m.encode_node(g, p, yn)
        })
    }

    fn apply_gd(&self, x: &Tensor<f32>, rep: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_channels(x)?;
        self.check_rep(x, rep, self.cfg.scale)?;
        self.run(|m, g, p| {
            let (xn, rn) = (g.input(x.clone()), g.input(rep.clone()));
            m.gd_node(g, p, xn, rn)
        })
    }

    fn apply_gr(&self, y: &Tensor<f32>, rep: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_channels(y)?;
        self.check_rep(y, rep, 1)?;
        self.run(|m, g, p| {
            let (yn, rn) = (g.input(y.clone()), g.input(rep.clone()));
            m.gr_node(g, p, yn, rn)
        })
    }
}

/// `G_d := A`, `G_r := A†` for an explicit operator. The representation is an
/// all-zero placeholder with one channel and is ignored.
#[derive(Clone, Debug)]
pub struct ExactLinearPair {
    op: LinearOperator,
}

impl ExactLinearPair {
    pub fn new(op: LinearOperator) -> Self {
        Self { op }
    }

    pub fn operator(&self) -> &LinearOperator {
        &self.op
    }
}

impl DegradationPair for ExactLinearPair {
    fn scale(&self) -> usize {
        self.op.hr_dims().0 / self.op.lr_dims().0
    }

    fn encode(&self, y: &Tensor<f32>) -> Result<Tensor<f32>> {
        let d = y.dims();
        if d.len() != 4 {
            return Err(Error::Shape(format!("expected [N, C, h, w], got {d:?}")));
        }
        Ok(Tensor::zeros(&[d[0], 1, d[2], d[3]]))
    }

    fn apply_gd(&self, x: &Tensor<f32>, _rep: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(self.op.apply_tensor(x)?)
    }

    fn apply_gr(&self, y: &Tensor<f32>, _rep: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(self.op.apply_pinv_tensor(y)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DawareTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub consistency_weight: f64,
    pub log_every: usize,
}

impl Default for DawareTrainConfig {
    fn default() -> Self {
        Self { steps: 10_000, batch: 16, lr: 2e-4, consistency_weight: DEFAULT_CONSISTENCY_WEIGHT, log_every: 500 }
    }
}

/// Per-step values of each loss term.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DawareCurves {
    pub total: Vec<f64>,
    pub degradation: Vec<f64>,
    pub restoration: Vec<f64>,
    pub consistency: Vec<f64>,
}

/// Minibatch `([B, C, H, W], [B, C, h, w])` of pairs drawn with replacement.
pub fn draw_pairs(hr: &[Tensor<f32>], lr: &[Tensor<f32>], batch: usize, r: &mut impl Rng) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let idx: Vec<usize> = (0..batch).map(|_| r.random_range(0..hr.len())).collect();
    let xs: Vec<Tensor<f32>> = idx.iter().map(|&i| hr[i].clone()).collect();
    let ys: Vec<Tensor<f32>> = idx.iter().map(|&i| lr[i].clone()).collect();
    Ok((Tensor::stack(&xs)?, Tensor::stack(&ys)?))
}

/// Joint end-to-end training on `[C, H, W]` / `[C, h, w]` pairs in `[0, 1]`.
pub fn train_daware(
    models: &mut DegradationAwareModels,
    hr: &[Tensor<f32>],
    lr: &[Tensor<f32>],
    cfg: &DawareTrainConfig,
    seed: u64,
) -> Result<DawareCurves> {
    if hr.is_empty() || hr.len() != lr.len() {
        return Err(Error::Invalid(format!("need matching nonempty pairs, got {} hr / {} lr", hr.len(), lr.len())));
    }
    let mut r = rng::seeded(seed);
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, &models.params);
    let mut curves = DawareCurves::default();
    for step in 0..cfg.steps {
        let (x, y) = draw_pairs(hr, lr, cfg.batch, &mut r)?;
        models.check_channels(&y)?;
        let mut g = Graph::<f32>::new();
        let p = models.params.bind(&mut g, true);
        let (xn, yn) = (g.input(x), g.input(y));
        let tag = |e: Error| crate::diffusion::train::at_step(e, step);
        let l = models.joint_loss_node(&mut g, &p, xn, yn, cfg.consistency_weight).map_err(tag)?;
        let grads = g.backward(l.total).map_err(|e| tag(e.into()))?;
        opt.step(&mut models.params, &p.grads(&g, &grads)).map_err(|e| tag(e.into()))?;
        let v = |n: NodeId| f64::from(g.value(n).data()[0]);
        curves.total.push(v(l.total));
        curves.degradation.push(v(l.degradation));
        curves.restoration.push(v(l.restoration));
        curves.consistency.push(v(l.consistency));
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            log::info!(
                "daware step {step}: total {:.5} gd {:.5} gr {:.5} cons {:.5}",
                v(l.total),
                v(l.degradation),
                v(l.restoration),
                v(l.consistency)
            );
        }
    }
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::build_avgpool_operator;

    fn models(scale: usize) -> DegradationAwareModels {
        let cfg = DawareConfig { channels: 1, scale, rep_dim: 8, width: 8 };
        DegradationAwareModels::new(cfg, &mut rng::seeded(2)).unwrap()
    }

    #[test]
    fn shape_contracts_across_scales() {
        for s in [2, 4, 8] {
            let m = models(s);
            let x = Tensor::from_fn(&[2, 1, 16, 16], |i| (i as f32 * 0.37).sin() * 0.5 + 0.5);
            let y = Tensor::from_fn(&[2, 1, 16 / s, 16 / s], |i| (i as f32 * 0.11).cos() * 0.5 + 0.5);
            let rep = m.encode(&y).unwrap();
            assert_eq!(rep.dims(), &[2, 8, 16 / s, 16 / s]);
            assert_eq!(m.apply_gd(&x, &rep).unwrap().dims(), y.dims());
            assert_eq!(m.apply_gr(&y, &rep).unwrap().dims(), x.dims());
            assert!(m.apply_gr(&x, &rep).is_err());
        }
    }

    #[test]
    fn deterministic_calls() {
        let m = models(4);
        let y = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f32 / 16.0);
        assert_eq!(m.encode(&y).unwrap(), m.encode(&y).unwrap());
        let rep = m.encode(&y).unwrap();
        assert_eq!(m.apply_gr(&y, &rep).unwrap(), m.apply_gr(&y, &rep).unwrap());
        assert!(m.consistency_loss(&y).unwrap() >= 0.0);
    }

    #[test]
    fn exact_pair_round_trip_is_identity() {
        let pair = ExactLinearPair::new(build_avgpool_operator(2, (4, 4)).unwrap());
        let y = Tensor::from_fn(&[1, 1, 2, 2], |i| i as f32 * 0.25);
        let rep = pair.encode(&y).unwrap();
        let back = pair.apply_gd(&pair.apply_gr(&y, &rep).unwrap(), &rep).unwrap();
        for (a, b) in back.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(pair.scale(), 2);
    }

    #[test]
    fn archive_round_trip_and_initial_loss() {
        let m = models(2);
        let a = TensorArchive::from_bytes(&m.to_archive().unwrap().to_bytes()).unwrap();
        let b = DegradationAwareModels::from_archive(&a).unwrap();
        assert_eq!(b.params, m.params);
        let hr = vec![Tensor::from_fn(&[1, 8, 8], |i| (i % 5) as f32 / 5.0)];
        let lr = vec![Tensor::from_fn(&[1, 4, 4], |i| (i % 3) as f32 / 3.0)];
        let cfg = DawareTrainConfig { steps: 2, batch: 2, log_every: 0, ..Default::default() };
        let mut mm = m.clone();
        let c = train_daware(&mut mm, &hr, &lr, &cfg, 1).unwrap();
        assert!(c.total[0] > 0.0);
        assert_eq!(c.total.len(), 2);
    }
}
