//! Central finite-difference gradient checks in f64 with h = 1e-3.

use dadiff_core::daware::{DawareConfig, DegradationAwareModels};
use dadiff_core::diffusion::train::eps_loss;
use dadiff_core::diffusion::{EpsModel, EpsNetConfig};
use dadiff_core::guidance::{EstimatorConfig, KernelEstimator};
use dadiff_core::rng::seeded;
use dadiff_core::tensor::nn::{Bound, ParamSet};
use dadiff_core::tensor::{Graph, NodeId, Reduction};
use dadiff_core::Tensor;
use rand::Rng;

pub const H: f64 = 1e-3;
pub const TOL: f64 = 1e-3;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Values in ±[0.1, 1] so no entry sits within `H` of a kink at zero.
fn away_from_zero(rng: &mut impl Rng, dims: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random::<bool>() { m } else { -m }
    })
}

/// Reduce any node to a scalar through fixed random weights.
fn weighted_sum(g: &mut Graph<f64>, x: NodeId, seed: u64) -> NodeId {
    let mut rng = seeded(seed);
    let w = Tensor::from_fn(g.dims(x), |_| rng.random_range(-1.0..1.0));
    let w = g.input(w);
    let p = g.mul(x, w).unwrap();
    g.sum(p).unwrap()
}

/// Compare analytic and finite-difference gradients of `f` with respect to
/// every entry of every input. Returns the worst relative error.
fn check_inputs(inputs: &[Tensor<f64>], f: impl Fn(&mut Graph<f64>, &[NodeId]) -> NodeId) -> f64 {
    let eval = |ins: &[Tensor<f64>]| {
        let mut g = Graph::<f64>::new();
        let ids: Vec<NodeId> = ins.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &ids);
        g.value(out).data()[0]
    };
    let mut g = Graph::<f64>::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &ids);
    let grads = g.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (i, id) in ids.iter().enumerate() {
        let analytic = grads.wrt(&g, *id);
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

/// Same comparison for a parameter set, on `samples` randomly chosen entries.
/// With `kinked` set, samples whose one-sided differences disagree (the
/// probe straddles an L1 or leaky-relu kink) are redrawn; at most a tenth of
/// the draws may be discarded.
fn check_params(
    params: &ParamSet<f64>,
    samples: usize,
    seed: u64,
    kinked: bool,
    f: impl Fn(&mut Graph<f64>, &Bound) -> NodeId,
) -> f64 {
    let eval = |ps: &ParamSet<f64>| {
        let mut g = Graph::<f64>::new();
        let p = ps.bind(&mut g, false);
        let out = f(&mut g, &p);
        g.value(out).data()[0]
    };
    let mut g = Graph::<f64>::new();
    let p = params.bind(&mut g, true);
    let out = f(&mut g, &p);
    let base = g.value(out).data()[0];
    let grads = g.backward(out).unwrap();
    let analytic = p.grads(&g, &grads);
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    while checked < samples {
        let i = rng.random_range(0..params.len());
        let j = rng.random_range(0..params.tensors()[i].numel());
        let mut plus = params.clone();
        plus.tensors_mut()[i].data_mut()[j] += H;
        let mut minus = params.clone();
        minus.tensors_mut()[i].data_mut()[j] -= H;
        let (fp, fm) = (eval(&plus), eval(&minus));
        let numeric = (fp - fm) / (2.0 * H);
        if kinked {
            let (right, left) = ((fp - base) / H, (base - fm) / H);
            if (right - left).abs() > 1e-3 * numeric.abs().max(1e-3) {
                skipped += 1;
                assert!(skipped * 10 <= samples, "too many probes straddle kinks");
                continue;
            }
        }
        worst = worst.max(rel_err(analytic[i].data()[j], numeric));
        checked += 1;
    }
    // Every parameter tensor must also receive some gradient.
    for (i, a) in analytic.iter().enumerate() {
        assert!(a.data().iter().any(|&v| v != 0.0), "parameter {} got no gradient", params.names()[i]);
    }
    worst
}


type Check = (String, f64);

fn unary(name: &str, dims: &[usize], seed: u64, f: impl Fn(&mut Graph<f64>, NodeId) -> NodeId) -> Check {
    let x = away_from_zero(&mut seeded(seed), dims);
    (name.to_string(), check_inputs(&[x], |g, v| {
        let y = f(g, v[0]);
        weighted_sum(g, y, seed + 100)
    }))
}

fn binary(name: &str, a: &[usize], b: &[usize], seed: u64, f: impl Fn(&mut Graph<f64>, NodeId, NodeId) -> NodeId) -> Check {
    let mut rng = seeded(seed);
    let ins = [away_from_zero(&mut rng, a), away_from_zero(&mut rng, b)];
    (name.to_string(), check_inputs(&ins, |g, v| {
        let y = f(g, v[0], v[1]);
        weighted_sum(g, y, seed + 100)
    }))
}

/// Worst relative error per op kind.
pub fn op_checks() -> Vec<Check> {
    let mut out = vec![
        binary("add", &[2, 3], &[2, 3], 1, |g, a, b| g.add(a, b).unwrap()),
        binary("sub", &[2, 3], &[2, 3], 2, |g, a, b| g.sub(a, b).unwrap()),
        binary("mul", &[2, 3], &[2, 3], 3, |g, a, b| g.mul(a, b).unwrap()),
        unary("scale", &[2, 3], 4, |g, a| g.scale(a, -1.7).unwrap()),
        unary("relu", &[1, 2, 3, 3], 5, |g, a| g.relu(a).unwrap()),
        unary("leaky_relu", &[1, 2, 3, 3], 6, |g, a| g.leaky_relu(a, 0.2).unwrap()),
        binary("add_channel_bias", &[2, 3, 4, 4], &[3], 7, |g, a, b| g.add_channel_bias(a, b).unwrap()),
        unary("avg_pool", &[2, 3, 4, 4], 8, |g, a| g.avg_pool(a, 2).unwrap()),
        unary("upsample_nearest", &[2, 3, 2, 2], 9, |g, a| g.upsample_nearest(a, 2).unwrap()),
        binary("concat_channels", &[2, 3, 4, 4], &[2, 1, 4, 4], 10, |g, a, b| g.concat_channels(&[a, b]).unwrap()),
        unary("reshape", &[2, 3, 4, 4], 11, |g, a| g.reshape(a, &[2, 48]).unwrap()),
    ];
    for (i, (stride, pad, k)) in [(1, 1, 3), (2, 0, 2), (2, 1, 3), (1, 0, 1)].into_iter().enumerate() {
        out.push(binary(&format!("conv2d s{stride} p{pad} k{k}"), &[2, 2, 4, 4], &[3, 2, k, k], 20 + i as u64, move |g, x, w| {
            g.conv2d(x, w, stride, pad).unwrap()
        }));
    }
    let mut rng = seeded(30);
    let lin = [away_from_zero(&mut rng, &[3, 4]), away_from_zero(&mut rng, &[5, 4]), away_from_zero(&mut rng, &[5])];
    out.push(("linear".into(), check_inputs(&lin, |g, v| {
        let y = g.linear(v[0], v[1], v[2]).unwrap();
        weighted_sum(g, y, 31)
    })));
    let a = away_from_zero(&mut rng, &[2, 4]);
    // Keep a − b away from zero for the L1 kink.
    let offsets: Vec<f64> = (0..a.numel()).map(|_| if rng.random::<bool>() { 0.3 } else { -0.3 }).collect();
    let b = Tensor::new(a.dims().to_vec(), a.data().iter().zip(&offsets).map(|(v, s)| v + s).collect()).unwrap();
    let pair = [a, b];
    for (tag, red) in [("sum", Reduction::Sum), ("mean", Reduction::Mean)] {
        out.push((format!("l1_loss {tag}"), check_inputs(&pair, |g, v| g.l1_loss(v[0], v[1], red).unwrap())));
        out.push((format!("mse_loss {tag}"), check_inputs(&pair, |g, v| g.mse_loss(v[0], v[1], red).unwrap())));
    }
    out.push(("sum".into(), check_inputs(&pair[..1], |g, v| {
        let s = g.mul(v[0], v[0]).unwrap();
        g.sum(s).unwrap()
    })));
    out.push(("mean".into(), check_inputs(&pair[..1], |g, v| {
        let s = g.mul(v[0], v[0]).unwrap();
        g.mean(s).unwrap()
    })));
    out
}

pub fn eps_loss_check() -> Check {
    let cfg = EpsNetConfig { channels: 1, width1: 2, width2: 3, emb_dim: 4, hidden: 3 };
    let model = EpsModel::new(cfg, 20, 1e-4, 0.02, (4, 4), &mut seeded(7)).unwrap();
    let params = model.params.cast::<f64>();
    let mut rng = seeded(8);
    let x_t = away_from_zero(&mut rng, &[2, 1, 4, 4]);
    let eps = away_from_zero(&mut rng, &[2, 1, 4, 4]);
    let e = check_params(&params, 60, 9, false, |g, p| {
        let x = g.input(x_t.clone());
        let n = g.input(eps.clone());
        eps_loss(&model, g, p, x, &[3, 17], n).unwrap()
    });
    ("eps-prediction loss".into(), e)
}

pub fn daware_loss_check() -> Check {
    let cfg = DawareConfig { channels: 1, scale: 2, rep_dim: 2, width: 3 };
    let models = DegradationAwareModels::new(cfg, &mut seeded(10)).unwrap();
    let params = models.params.cast::<f64>();
    let mut rng = seeded(11);
    let hr = Tensor::from_fn(&[2, 1, 4, 4], |_| rng.random_range(0.0..1.0));
    let lr = Tensor::from_fn(&[2, 1, 2, 2], |_| rng.random_range(0.0..1.0));
    let e = check_params(&params, 60, 12, true, |g, p| {
        let x = g.input(hr.clone());
        let y = g.input(lr.clone());
        models.joint_loss_node(g, p, x, y, 0.1).unwrap().total
    });
    ("degradation-aware joint loss".into(), e)
}

pub fn kernel_loss_check() -> Check {
    let cfg = EstimatorConfig { channels: 1, kernel_size: 3, hidden: 4 };
    let est = KernelEstimator::new(cfg, (4, 4), &mut seeded(13)).unwrap();
    let params = est.params.cast::<f64>();
    let mut rng = seeded(14);
    let lr = Tensor::from_fn(&[2, 1, 4, 4], |_| rng.random_range(0.0..1.0));
    let k = Tensor::from_fn(&[2, 9], |_| rng.random_range(0.0..0.2));
    let e = check_params(&params, 60, 15, true, |g, p| {
        let y = g.input(lr.clone());
        let kn = g.input(k.clone());
        est.loss_node(g, p, y, kn).unwrap()
    });
    ("kernel-estimator loss".into(), e)
}
