use proptest::prelude::*;

use dadiff_core::degradation::{degrade, GaussianKernel};
use dadiff_core::diffusion::DiffusionSchedule;
use dadiff_core::eval::archive::{ArchiveError, TensorArchive};
use dadiff_core::eval::metrics::{psnr, ssim};
use dadiff_core::eval::pnm::{decode, encode};
use dadiff_core::eval::report::{ExperimentReport, ReportRow};
use dadiff_core::linops::{build_avgpool_operator, build_conv_stride_operator, penrose_residuals, range_null_rectify};
use dadiff_core::rng::seeded;
use dadiff_core::tensor::{conv_output_len, Graph};
use dadiff_core::Tensor;

fn image(seed: u64, dims: &[usize]) -> Tensor<f32> {
    use rand::Rng;
    let mut rng = seeded(seed);
    Tensor::from_fn(dims, |_| rng.random_range(0.0f32..1.0))
}

fn as_f64(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|&v| f64::from(v)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_output_size(k in 1usize..=7, s in 1usize..=4, pad in 0usize..=3, extra in 0usize..12) {
        let h = k + extra;
        let expect = (h + 2 * pad - k) / s + 1;
        prop_assert_eq!(conv_output_len(h, k, s, pad), Some(expect));
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros(&[1, 1, h, h]));
        let w = g.input(Tensor::zeros(&[1, 1, k, k]));
        let y = g.conv2d(x, w, s, pad).unwrap();
        prop_assert_eq!(g.dims(y), &[1, 1, expect, expect][..]);
    }

    #[test]
    fn pool_after_upsample_is_identity(s in 1usize..=4, seed in any::<u64>()) {
        let x = image(seed, &[2, 1, 3, 3]);
        let mut g = Graph::<f32>::new();
        let n = g.input(x.clone());
        let up = g.upsample_nearest(n, s).unwrap();
        let back = g.avg_pool(up, s).unwrap();
        for (a, b) in g.value(back).data().iter().zip(x.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn psnr_and_ssim_symmetric(seed in any::<u64>()) {
        let a = image(seed, &[1, 16, 16]);
        let b = image(seed ^ 1, &[1, 16, 16]);
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn psnr_shift_invariant(seed in any::<u64>(), c in -0.2f32..0.2) {
        // Keep both images inside [0, 1] after the shift.
        let a = image(seed, &[1, 12, 12]).map(|v| 0.25 + 0.5 * v);
        let b = image(seed ^ 7, &[1, 12, 12]).map(|v| 0.25 + 0.5 * v);
        let shift = |t: &Tensor<f32>| Tensor::new(t.dims().to_vec(), t.data().iter().map(|&v| (f64::from(v) + f64::from(c)) as f32).collect()).unwrap();
        let p0 = psnr(&a, &b, 1.0).unwrap();
        let p1 = psnr(&shift(&a), &shift(&b), 1.0).unwrap();
        // Shifting in f32 perturbs the difference by at most one ulp per pixel.
        prop_assert!((p0 - p1).abs() < 1e-4, "{} vs {}", p0, p1);
    }

    #[test]
    fn archive_round_trip_bitwise(seed in any::<u64>(), n in 1usize..4, d0 in 1usize..5, d1 in 1usize..5) {
        let mut a = TensorArchive::new();
        for i in 0..n {
            let t = image(seed.wrapping_add(i as u64), &[d0, d1]).map(|v| (v - 0.5) * 1e3);
            a.insert(format!("t{i}"), t).unwrap();
        }
        a.set_meta("seed", seed).unwrap();
        let bytes = a.to_bytes();
        let back = TensorArchive::from_bytes(&bytes).unwrap();
        for (name, t) in a.entries() {
            let u = back.require(name).unwrap();
            prop_assert_eq!(u.dims(), t.dims());
            prop_assert!(u.data().iter().zip(t.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        prop_assert_eq!(back.to_bytes(), bytes.clone());
        let cut = bytes.len() / 2;
        let truncated = matches!(TensorArchive::from_bytes(&bytes[..cut]), Err(ArchiveError::Parse { .. }));
        prop_assert!(truncated);
    }

    #[test]
    fn degrade_is_linear(seed in any::<u64>(), a in -2.0f32..2.0, b in -2.0f32..2.0) {
        let k = GaussianKernel::sample(&mut seeded(seed));
        let x = image(seed ^ 3, &[1, 16, 16]);
        let y = image(seed ^ 5, &[1, 16, 16]);
        let mix = x.zip_map(&y, |p, q| a * p + b * q).unwrap();
        let lhs = degrade(&mix, k.as_kernel(), 4).unwrap();
        let dx = degrade(&x, k.as_kernel(), 4).unwrap();
        let dy = degrade(&y, k.as_kernel(), 4).unwrap();
        for ((l, p), q) in lhs.data().iter().zip(dx.data()).zip(dy.data()) {
            prop_assert!((l - (a * p + b * q)).abs() < 1e-5);
        }
    }

    #[test]
    fn dense_operator_matches_degrade(seed in any::<u64>(), scale in prop::sample::select(vec![2usize, 4])) {
        let k = GaussianKernel::sample(&mut seeded(seed));
        let op = build_conv_stride_operator(k.as_kernel(), scale, (16, 16)).unwrap();
        let x = image(seed ^ 9, &[1, 16, 16]);
        let via_graph = degrade(&x, k.as_kernel(), scale).unwrap();
        let via_matrix = op.apply(&as_f64(&x)).unwrap();
        for (g, m) in via_graph.data().iter().zip(&via_matrix) {
            prop_assert!((f64::from(*g) - m).abs() < 1e-5);
        }
    }

    #[test]
    fn kernel_sampler_supports(seed in any::<u64>()) {
        let k = GaussianKernel::sample(&mut seeded(seed));
        prop_assert!(k.size() % 2 == 1 && (7..=21).contains(&k.size()));
        prop_assert!((0.2..=4.0).contains(&k.lambda1()) && (0.2..=4.0).contains(&k.lambda2()));
        prop_assert!((0.0..std::f64::consts::PI).contains(&k.theta()));
        prop_assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(k.weights().iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn spaced_schedule_keeps_alpha_bar(n in 1usize..=1000) {
        let s = DiffusionSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let sp = s.spaced(n).unwrap();
        prop_assert_eq!(sp.timesteps().len(), sp.betas().len());
        prop_assert_eq!(sp.timesteps()[0], if n == 1 { 999 } else { 0 });
        prop_assert_eq!(*sp.timesteps().last().unwrap(), 999);
        for (k, &t) in sp.timesteps().iter().enumerate() {
            prop_assert!((sp.alpha_bar(k) - s.alpha_bar(t).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn pnm_round_trip_within_half_level(seed in any::<u64>(), c in prop::sample::select(vec![1usize, 3])) {
        let x = image(seed, &[c, 5, 7]);
        let back = decode(&encode(&x).unwrap()).unwrap();
        prop_assert_eq!(back.dims(), x.dims());
        for (a, b) in back.data().iter().zip(x.data()) {
            prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-7);
        }
    }

    #[test]
    fn report_aggregates_recompute(psnrs in prop::collection::vec(5.0f64..40.0, 1..12)) {
        let rows: Vec<ReportRow> = psnrs
            .iter()
            .enumerate()
            .map(|(i, &p)| ReportRow { id: i, mode: "implicit".into(), alpha: if i % 2 == 0 { 0.3 } else { 1.0 }, perturb: true, psnr_db: p, ssim: p / 40.0, seed: 1, ms: 0 })
            .collect();
        let r = ExperimentReport::from_rows(rows);
        let back = ExperimentReport::from_json(&r.to_json()).unwrap();
        back.verify_aggregates().unwrap();
        let evens: Vec<f64> = psnrs.iter().step_by(2).copied().collect();
        let mean = evens.iter().sum::<f64>() / evens.len() as f64;
        prop_assert!((back.cell("implicit", 0.3, true).unwrap().psnr_mean - mean).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn penrose_identities_for_sampled_kernels(seed in any::<u64>(), scale in prop::sample::select(vec![2usize, 4])) {
        let k = GaussianKernel::sample(&mut seeded(seed));
        let op = build_conv_stride_operator(k.as_kernel(), scale, (16, 16)).unwrap();
        let r = penrose_residuals(op.matrix(), op.pinv());
        prop_assert!(r.max() < 1e-6, "{:?}", r);
    }

    #[test]
    fn rectification_is_consistent_and_idempotent(seed in any::<u64>(), pool in any::<bool>()) {
        let op = if pool {
            build_avgpool_operator(4, (16, 16)).unwrap()
        } else {
            build_conv_stride_operator(GaussianKernel::sample(&mut seeded(seed)).as_kernel(), 4, (16, 16)).unwrap()
        };
        let y = op.apply(&as_f64(&image(seed ^ 11, &[1, 16, 16]))).unwrap();
        let x = as_f64(&image(seed ^ 13, &[1, 16, 16]));
        let once = range_null_rectify(&x, &y, &op).unwrap();
        let twice = range_null_rectify(&once, &y, &op).unwrap();
        let ax = op.apply(&once).unwrap();
        prop_assert!(ax.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-5));
        prop_assert!(once.iter().zip(&twice).all(|(a, b)| (a - b).abs() < 1e-9));
    }
}

#[test]
fn corrupt_magic_reports_offset_zero() {
    let mut a = TensorArchive::new();
    a.insert("x", Tensor::zeros(&[2])).unwrap();
    let mut bytes = a.to_bytes();
    bytes[0] = b'X';
    match TensorArchive::from_bytes(&bytes) {
        Err(ArchiveError::Parse { offset, .. }) => assert_eq!(offset, 0),
        other => panic!("expected parse error, got {other:?}"),
    }
}
