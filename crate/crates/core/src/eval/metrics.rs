use crate::tensor::Tensor;
use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("metric inputs {:?} vs {:?}", a.dims(), b.dims())));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Invalid("metric input has non-finite values".into()));
    }
    Ok(())
}

pub fn mse(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    check_pair(a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(s / a.numel() as f64)
}

/// `10 log10(max_val² / MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>, max_val: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / m).log10())
}

/// Mean and sample standard deviation of the finite values. Infinite PSNRs
/// (exact reconstructions) are dropped with a warning.
pub fn finite_mean_std(values: &[f64]) -> Option<(f64, f64)> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < values.len() {
        log::warn!("{} infinite value(s) excluded from the mean", values.len() - finite.len());
    }
    if finite.is_empty() {
        return None;
    }
    let n = finite.len() as f64;
    let mean = finite.iter().sum::<f64>() / n;
    let var = if finite.len() > 1 { finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Some((mean, var.sqrt()))
}

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    let mut w = vec![0.0; SSIM_WINDOW * SSIM_WINDOW];
    for i in 0..SSIM_WINDOW {
        for j in 0..SSIM_WINDOW {
            w[i * SSIM_WINDOW + j] = g[i] * g[j];
        }
    }
    w
}

/// Mean SSIM over all fully contained 11x11 Gaussian windows of every plane,
/// dynamic range 1.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    check_pair(a, b)?;
    let dims = a.dims();
    let rank = dims.len();
    if rank < 2 || dims[rank - 2] < SSIM_WINDOW || dims[rank - 1] < SSIM_WINDOW {
        return Err(Error::Shape(format!("image {dims:?} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let (h, w) = (dims[rank - 2], dims[rank - 1]);
    let win = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut count = 0usize;
    for (pa, pb) in a.data().chunks(h * w).zip(b.data().chunks(h * w)) {
        for oy in 0..=h - SSIM_WINDOW {
            for ox in 0..=w - SSIM_WINDOW {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let g = win[i * SSIM_WINDOW + j];
                        let x = f64::from(pa[(oy + i) * w + ox + j]);
                        let y = f64::from(pb[(oy + i) * w + ox + j]);
                        mx += g * x;
                        my += g * y;
                        sxx += g * x * x;
                        syy += g * y * y;
                        sxy += g * x * y;
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cxy = sxy - mx * my;
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}
