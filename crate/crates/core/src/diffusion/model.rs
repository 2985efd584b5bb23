use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::eval::archive::TensorArchive;
use crate::tensor::nn::{scale_param, Bound, Conv2d, Dense, ParamSet, LEAKY_SLOPE};
use crate::tensor::{Element, Graph, NodeId, Tensor};
use crate::{Error, Result};

use super::schedule::DiffusionSchedule;

pub const EPS_ARCH_VERSION: &str = "eps-unet-lite-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsNetConfig {
    pub channels: usize,
    pub width1: usize,
    pub width2: usize,
    pub emb_dim: usize,
    pub hidden: usize,
}

impl Default for EpsNetConfig {
    fn default() -> Self {
        Self { channels: 1, width1: 32, width2: 64, emb_dim: 32, hidden: 64 }
    }
}

/// `[N, dim]` sinusoidal embedding of integer timesteps.
pub fn timestep_embedding(ts: &[usize], dim: usize) -> Tensor<f32> {
    let half = dim / 2;
    let mut out = Tensor::zeros(&[ts.len(), dim]);
    let data = out.data_mut();
    for (n, &t) in ts.iter().enumerate() {
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            let a = t as f64 * freq;
            data[n * dim + i] = a.sin() as f32;
            data[n * dim + half + i] = a.cos() as f32;
        }
    }
    out
}

/// Small U-shaped ε-network: two stride-2 down blocks, a bottleneck and two
/// nearest-upsample up blocks with skip concatenation. Each block gets an
/// additive per-channel bias from the time embedding.
#[derive(Clone, Debug)]
pub struct EpsNet {
    cfg: EpsNetConfig,
    emb: Dense,
    conv_in: Conv2d,
    down1: Conv2d,
    down2: Conv2d,
    mid: Conv2d,
    up1: Conv2d,
    up2: Conv2d,
    conv_out: Conv2d,
    t_in: Dense,
    t_down1: Dense,
    t_down2: Dense,
    t_mid: Dense,
    t_up1: Dense,
    t_up2: Dense,
}

impl EpsNet {
    pub fn new(cfg: EpsNetConfig, ps: &mut ParamSet<f32>, rng: &mut impl Rng) -> Self {
        let (c, w1, w2, h) = (cfg.channels, cfg.width1, cfg.width2, cfg.hidden);
        let emb = Dense::new(ps, rng, "temb", cfg.emb_dim, h);
        let conv_in = Conv2d::same3(ps, rng, "conv_in", c, w1);
        let down1 = Conv2d::new(ps, rng, "down1", w1, w1, 3, 2, 1);
        let down2 = Conv2d::new(ps, rng, "down2", w1, w2, 3, 2, 1);
        let mid = Conv2d::same3(ps, rng, "mid", w2, w2);
        let up1 = Conv2d::same3(ps, rng, "up1", w2 + w1, w1);
        let up2 = Conv2d::same3(ps, rng, "up2", w1 + w1, w1);
        let conv_out = Conv2d::same3(ps, rng, "conv_out", w1, c);
        scale_param(ps, conv_out.weight(), 0.1);
        let t_in = Dense::new(ps, rng, "t_in", h, w1);
        let t_down1 = Dense::new(ps, rng, "t_down1", h, w1);
        let t_down2 = Dense::new(ps, rng, "t_down2", h, w2);
        let t_mid = Dense::new(ps, rng, "t_mid", h, w2);
        let t_up1 = Dense::new(ps, rng, "t_up1", h, w1);
        let t_up2 = Dense::new(ps, rng, "t_up2", h, w1);
        Self { cfg, emb, conv_in, down1, down2, mid, up1, up2, conv_out, t_in, t_down1, t_down2, t_mid, t_up1, t_up2 }
    }

    pub fn config(&self) -> &EpsNetConfig {
        &self.cfg
    }

    fn block<E: Element>(
        g: &mut Graph<E>,
        p: &Bound,
        conv: &Conv2d,
        tproj: &Dense,
        temb: NodeId,
        x: NodeId,
    ) -> Result<NodeId> {
        let h = conv.forward(g, p, x)?;
        let b = tproj.forward(g, p, temb)?;
        let h = g.add_channel_bias(h, b)?;
        Ok(g.leaky_relu(h, LEAKY_SLOPE)?)
    }

    /// ε̂ for `x` of dims `[N, C, H, W]` (H, W divisible by 4) at timesteps `ts`.
    pub fn forward<E: Element>(&self, g: &mut Graph<E>, p: &Bound, x: NodeId, ts: &[usize]) -> Result<NodeId> {
        let dims = g.dims(x).to_vec();
        if dims.len() != 4 || dims[0] != ts.len() || dims[1] != self.cfg.channels || dims[2] % 4 != 0 || dims[3] % 4 != 0 {
            return Err(Error::Shape(format!(
                "eps network needs [N={}, {}, 4k, 4k] input, got {dims:?}",
                ts.len(),
                self.cfg.channels
            )));
        }
        let e = g.input(timestep_embedding(ts, self.cfg.emb_dim).cast());
        let e = self.emb.forward(g, p, e)?;
        let temb = g.leaky_relu(e, LEAKY_SLOPE)?;
        let h0 = Self::block(g, p, &self.conv_in, &self.t_in, temb, x)?;
        let h1 = Self::block(g, p, &self.down1, &self.t_down1, temb, h0)?;
        let h2 = Self::block(g, p, &self.down2, &self.t_down2, temb, h1)?;
        let m = Self::block(g, p, &self.mid, &self.t_mid, temb, h2)?;
        let u = g.upsample_nearest(m, 2)?;
        let u = g.concat_channels(&[u, h1])?;
        let u1 = Self::block(g, p, &self.up1, &self.t_up1, temb, u)?;
        let u = g.upsample_nearest(u1, 2)?;
        let u = g.concat_channels(&[u, h0])?;
        let u2 = Self::block(g, p, &self.up2, &self.t_up2, temb, u)?;
        self.conv_out.forward(g, p, u2).map_err(Error::from)
    }
}

/// A noise-prediction network with its parameters and the schedule it was
/// trained against.
#[derive(Clone, Debug)]
pub struct EpsModel {
    pub net: EpsNet,
    pub params: ParamSet<f32>,
    pub schedule: DiffusionSchedule,
    pub beta_start: f64,
    pub beta_end: f64,
    pub image_dims: (usize, usize),
}

impl EpsModel {
    pub fn new(
        cfg: EpsNetConfig,
        t_total: usize,
        beta_start: f64,
        beta_end: f64,
        image_dims: (usize, usize),
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if image_dims.0 % 4 != 0 || image_dims.1 % 4 != 0 {
            return Err(Error::Shape(format!("image dims {image_dims:?} must be multiples of 4")));
        }
        let schedule = DiffusionSchedule::linear(t_total, beta_start, beta_end)?;
        let mut params = ParamSet::new();
        let net = EpsNet::new(cfg, &mut params, rng);
        Ok(Self { net, params, schedule, beta_start, beta_end, image_dims })
    }

    pub fn channels(&self) -> usize {
        self.net.config().channels
    }

    /// Inference-only ε̂ for a batch `[N, C, H, W]`.
    pub fn predict(&self, x: &Tensor<f32>, ts: &[usize]) -> Result<Tensor<f32>> {
        let mut g = Graph::<f32>::new();
        let p = self.params.bind(&mut g, false);
        let xi = g.input(x.clone());
        let out = self.net.forward(&mut g, &p, xi, ts)?;
        Ok(g.value(out).clone())
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut a = TensorArchive::new();
        for (name, t) in self.params.iter() {
            a.insert(name, t.clone())?;
        }
        let c = self.net.config();
        a.set_meta("kind", "eps-model")?;
        a.set_meta("arch-version", EPS_ARCH_VERSION)?;
        a.set_meta("T", self.schedule.len())?;
        a.set_meta("beta1", self.beta_start)?;
        a.set_meta("betaT", self.beta_end)?;
        a.set_meta("image-dims", format!("{}x{}", self.image_dims.0, self.image_dims.1))?;
        a.set_meta("channels", c.channels)?;
        a.set_meta("width1", c.width1)?;
        a.set_meta("width2", c.width2)?;
        a.set_meta("emb-dim", c.emb_dim)?;
        a.set_meta("hidden", c.hidden)?;
        Ok(a)
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self> {
        if a.meta("arch-version") != Some(EPS_ARCH_VERSION) {
            return Err(Error::Invalid(format!("not an eps checkpoint (arch-version {:?})", a.meta("arch-version"))));
        }
        let cfg = EpsNetConfig {
            channels: a.meta_parse("channels")?,
            width1: a.meta_parse("width1")?,
            width2: a.meta_parse("width2")?,
            emb_dim: a.meta_parse("emb-dim")?,
            hidden: a.meta_parse("hidden")?,
        };
        let dims = parse_dims(a.meta("image-dims").unwrap_or_default())?;
        let mut rng = crate::rng::seeded(0);
        let mut m = Self::new(cfg, a.meta_parse("T")?, a.meta_parse("beta1")?, a.meta_parse("betaT")?, dims, &mut rng)?;
        m.params.load_from(|n| a.get(n))?;
        Ok(m)
    }
}

pub(crate) fn parse_dims(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Invalid(format!("malformed dims {s:?}, expected HxW"));
    let (h, w) = s.split_once('x').ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}
