//! Quick in-process self checks run by `dadiff selftest`.

use std::f64::consts::PI;

use rand::Rng as _;

use crate::daware::ExactLinearPair;
use crate::degradation::GaussianKernel;
use crate::diffusion::schedule::gaussian_like;
use crate::diffusion::{forward_sample, predict_x0, sample_unconditional, DiffusionSchedule, EpsModel, EpsNetConfig};
use crate::eval::archive::TensorArchive;
use crate::eval::metrics::{psnr, ssim};
use crate::guidance::{dadiff_rectify, restore, GuidanceConfig, GuidanceMode, Models};
use crate::linops::{build_avgpool_operator, build_conv_stride_operator, penrose_residuals, range_null_rectify, LinearOperator};
use crate::rng::{seeded, stream};
use crate::tensor::Tensor;
use crate::Result;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    match f() {
        Ok((passed, detail)) => CheckOutcome { name, passed, detail },
        Err(e) => CheckOutcome { name, passed: false, detail: format!("error: {e}") },
    }
}

fn random_ops(seed: u64, n: usize, hr: (usize, usize), scale: usize) -> Result<Vec<LinearOperator>> {
    let mut rng = seeded(seed);
    let mut ops = vec![build_avgpool_operator(scale, hr)?];
    for _ in 0..n {
        ops.push(build_conv_stride_operator(GaussianKernel::sample(&mut rng).as_kernel(), scale, hr)?);
    }
    Ok(ops)
}

fn uniform(rng: &mut crate::rng::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

pub fn run(seed: u64) -> Vec<CheckOutcome> {
    let hr = (16, 16);
    let scale = 4;
    let mut out = Vec::new();
    let ops = match random_ops(seed, 4, hr, scale) {
        Ok(ops) => ops,
        Err(e) => return vec![CheckOutcome { name: "operator construction", passed: false, detail: e.to_string() }],
    };

    out.push(check("pseudo-inverse identities", || {
        let worst = ops
            .iter()
            .map(|op| penrose_residuals(op.matrix(), op.pinv()).max())
            .fold(0.0, f64::max);
        Ok((worst < 1e-6, format!("max residual {worst:.2e}")))
    }));

    out.push(check("range consistency", || {
        let mut rng = stream(seed, 1);
        let mut worst: f64 = 0.0;
        for op in &ops {
            let y = op.apply(&uniform(&mut rng, hr.0 * hr.1))?;
            let x = range_null_rectify(&uniform(&mut rng, hr.0 * hr.1), &y, op)?;
            let ax = op.apply(&x)?;
            worst = ax.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        }
        Ok((worst < 1e-5, format!("max |Ax - y| {worst:.2e}")))
    }));

    out.push(check("learned rectifier with exact operator", || {
        let mut rng = stream(seed, 2);
        let mut worst: f64 = 0.0;
        for op in &ops {
            let pair = ExactLinearPair::new(op.clone());
            let x = Tensor::new(vec![1, 1, hr.0, hr.1], uniform(&mut rng, hr.0 * hr.1).iter().map(|&v| v as f32).collect())?;
            let y = op.apply_tensor(&Tensor::new(vec![1, 1, hr.0, hr.1], uniform(&mut rng, hr.0 * hr.1).iter().map(|&v| v as f32).collect())?)?;
            let target = op.apply_pinv_tensor(&y)?;
            let rep = Tensor::zeros(&[1, 1, hr.0 / scale, hr.1 / scale]);
            let got = dadiff_rectify(&x, &target, &pair, &rep, 1.0)?;
            let xs: Vec<f64> = x.data().iter().map(|&v| f64::from(v)).collect();
            let ys: Vec<f64> = y.data().iter().map(|&v| f64::from(v)).collect();
            let want = range_null_rectify(&xs, &ys, op)?;
            worst = got.data().iter().zip(&want).map(|(g, w)| (f64::from(*g) - w).abs()).fold(worst, f64::max);
        }
        Ok((worst < 1e-5, format!("max deviation {worst:.2e}")))
    }));

    out.push(check("diffusion round trip and respacing", || {
        let sched = DiffusionSchedule::linear(1000, 1e-4, 0.02)?;
        let mut rng = stream(seed, 3);
        let x0 = Tensor::from_fn(&[1, 8, 8], |i| ((i as f64) * 0.37).sin());
        let mut worst: f64 = 0.0;
        for t in (0..1000).step_by(37).chain([999]) {
            let eps = gaussian_like(&[1, 8, 8], &mut rng).cast::<f64>();
            let xt = forward_sample(&x0, t, &eps, &sched)?;
            let back = predict_x0(&xt, &eps, sched.alpha_bar(t)?)?;
            worst = back.data().iter().zip(x0.data()).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        }
        let idx = DiffusionSchedule::linear(10, 1e-4, 0.02)?.spaced(5)?.timesteps().to_vec();
        let ok = worst <= 1e-5 && idx == [0, 2, 5, 7, 9];
        Ok((ok, format!("max x0 error {worst:.2e}, spaced(10,5) = {idx:?}")))
    }));

    out.push(check("zero guidance equals unconditional sampling", || {
        let cfg = EpsNetConfig { channels: 1, width1: 4, width2: 8, emb_dim: 8, hidden: 8 };
        let model = EpsModel::new(cfg, 50, 1e-4, 0.02, (8, 8), &mut stream(seed, 4))?;
        let pair = ExactLinearPair::new(build_avgpool_operator(2, (8, 8))?);
        let gcfg = GuidanceConfig { mode: GuidanceMode::Implicit, alpha: 0.0, steps: 10, scale: 2, ..GuidanceConfig::default() };
        let models = Models { eps: &model, daware: Some(&pair), estimator: None };
        let spaced = model.schedule.spaced(10)?;
        let y = Tensor::full(&[1, 1, 4, 4], 0.5);
        let mut same = true;
        for s in 0..3 {
            let guided = restore(&models, &y, &gcfg, &[seed + s])?.images.remove(0);
            let plain = sample_unconditional(&model, &spaced, seed + s)?;
            same &= guided.data().iter().zip(plain.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        }
        Ok((same, "3 seeds".into()))
    }));

    out.push(check("kernel sampler supports", || {
        let mut rng = stream(seed, 5);
        let mut bad = 0;
        for _ in 0..2000 {
            let k = GaussianKernel::sample(&mut rng);
            let sum: f64 = k.weights().iter().sum();
            let ok = k.size() % 2 == 1
                && (7..=21).contains(&k.size())
                && (0.2..=4.0).contains(&k.lambda1())
                && (0.2..=4.0).contains(&k.lambda2())
                && (0.0..PI).contains(&k.theta())
                && (sum - 1.0).abs() < 1e-9;
            bad += usize::from(!ok);
        }
        Ok((bad == 0, format!("{bad} of 2000 draws out of support")))
    }));

    out.push(check("metrics closed forms", || {
        let a = Tensor::full(&[1, 16, 16], 0.2f32);
        let b = a.map(|v| v + 0.1);
        let c = a.map(|v| v + 0.5);
        let p1 = psnr(&a, &b, 1.0)?;
        let p2 = psnr(&a, &c, 1.0)?;
        let s = ssim(&b, &b)?;
        let ok = (p1 - 20.0).abs() < 1e-4 && (p2 - 20.0 * 2f64.log10()).abs() < 1e-4 && s == 1.0;
        Ok((ok, format!("psnr {p1:.6} / {p2:.6}, ssim(x,x) {s}")))
    }));

    out.push(check("archive round trip", || {
        let mut a = TensorArchive::new();
        let t = Tensor::from_fn(&[2, 3, 5], |i| (i as f32).sqrt() - 1.5);
        a.insert("w", t.clone())?;
        a.set_meta("kind", "selftest")?;
        let back = TensorArchive::from_bytes(&a.to_bytes())?;
        let same = back.require("w")?.data().iter().zip(t.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        Ok((same && back.meta("kind") == Some("selftest"), String::new()))
    }));

    out
}
