//! Synthetic degradations: anisotropic Gaussian blur kernels, strided
//! blur-downsampling, procedural HR images and LR–HR training pairs.

use std::f64::consts::PI;

use rand::Rng;
use thiserror::Error;

use crate::linops::{Kernel2d, LinopsError};
use crate::rng;
use crate::tensor::{Graph, Tensor, TensorError};

pub const MIN_KERNEL_SIZE: usize = 7;
pub const MAX_KERNEL_SIZE: usize = 21;
pub const MIN_EIGENVALUE: f64 = 0.2;
pub const MAX_EIGENVALUE: f64 = 4.0;

#[derive(Debug, Error)]
pub enum DegradationError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid kernel parameters: {0}")]
    Kernel(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Linops(#[from] LinopsError),
}

/// Anisotropic Gaussian blur kernel with covariance `R(θ) diag(λ₁, λ₂) R(θ)ᵀ`,
/// normalised to unit sum.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel {
    lambda1: f64,
    lambda2: f64,
    theta: f64,
    kernel: Kernel2d,
}

impl GaussianKernel {
    pub fn new(size: usize, lambda1: f64, lambda2: f64, theta: f64) -> Result<Self, DegradationError> {
        if size % 2 == 0 || size == 0 {
            return Err(DegradationError::Kernel(format!("size {size} must be odd")));
        }
        if !(lambda1 > 0.0 && lambda2 > 0.0 && lambda1.is_finite() && lambda2.is_finite() && theta.is_finite()) {
            return Err(DegradationError::Kernel(format!("eigenvalues ({lambda1}, {lambda2}) must be positive")));
        }
        let (s, c) = theta.sin_cos();
        // Σ⁻¹ = R diag(1/λ₁, 1/λ₂) Rᵀ
        let (i1, i2) = (1.0 / lambda1, 1.0 / lambda2);
        let a = c * c * i1 + s * s * i2;
        let b = c * s * (i1 - i2);
        let d = s * s * i1 + c * c * i2;
        let mid = (size / 2) as f64;
        let mut w = Vec::with_capacity(size * size);
        for i in 0..size {
            let y = i as f64 - mid;
            for j in 0..size {
                let x = j as f64 - mid;
                w.push((-0.5 * (a * x * x + 2.0 * b * x * y + d * y * y)).exp());
            }
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        Ok(Self { lambda1, lambda2, theta, kernel: Kernel2d::new(size, w)? })
    }

    /// Draw size from the odd numbers in [7, 21], eigenvalues from U(0.2, 4)
    /// and rotation from U(0, π).
    pub fn sample(rng: &mut impl Rng) -> Self {
        let size = MIN_KERNEL_SIZE + 2 * rng.random_range(0..=(MAX_KERNEL_SIZE - MIN_KERNEL_SIZE) / 2);
        let lambda1 = rng.random_range(MIN_EIGENVALUE..MAX_EIGENVALUE);
        let lambda2 = rng.random_range(MIN_EIGENVALUE..MAX_EIGENVALUE);
        let theta = rng.random_range(0.0..PI);
        Self::new(size, lambda1, lambda2, theta).expect("sampled parameters are valid")
    }

    pub fn size(&self) -> usize {
        self.kernel.size()
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn weights(&self) -> &[f64] {
        self.kernel.weights()
    }

    pub fn as_kernel(&self) -> &Kernel2d {
        &self.kernel
    }

    /// Zero-embed the weights, centred, into a `k x k` grid (`k ≥ size`, odd).
    pub fn embedded(&self, k: usize) -> Vec<f64> {
        embed_kernel(&self.kernel, k)
    }
}

pub fn embed_kernel(kernel: &Kernel2d, k: usize) -> Vec<f64> {
    assert!(k >= kernel.size() && k % 2 == 1, "embedding grid {k} too small for {}", kernel.size());
    let off = (k - kernel.size()) / 2;
    let mut out = vec![0.0; k * k];
    for i in 0..kernel.size() {
        for j in 0..kernel.size() {
            out[(i + off) * k + j + off] = kernel.at(i, j);
        }
    }
    out
}

/// Strided correlation of every plane of an `[.., H, W]` image with `kernel`,
/// zero padding `(size − 1) / 2`, stride `scale`.
pub fn degrade(hr: &Tensor<f32>, kernel: &Kernel2d, scale: usize) -> Result<Tensor<f32>, DegradationError> {
    let dims = hr.dims();
    let rank = dims.len();
    if rank < 2 || scale == 0 {
        return Err(DegradationError::Dimension(format!("cannot degrade {dims:?} by {scale}")));
    }
    let (h, w) = (dims[rank - 2], dims[rank - 1]);
    if h % scale != 0 || w % scale != 0 {
        return Err(DegradationError::Dimension(format!("scale {scale} does not divide {h}x{w}")));
    }
    let planes = hr.numel() / (h * w);
    let mut g = Graph::<f32>::new();
    let x = g.input(hr.clone().reshape(&[planes, 1, h, w])?);
    let k = kernel.size();
    let wt = g.input(Tensor::new(vec![1, 1, k, k], kernel.weights().iter().map(|&v| v as f32).collect())?);
    let y = g.conv2d(x, wt, scale, k / 2)?;
    let (ho, wo) = (g.dims(y)[2], g.dims(y)[3]);
    let mut odims = dims.to_vec();
    odims[rank - 2] = ho;
    odims[rank - 1] = wo;
    Ok(g.value(y).clone().reshape(&odims)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShapeKind {
    Rect,
    Disc,
}

/// One flat-intensity shape in normalised image coordinates (`[0, 1]²`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyShape {
    pub kind: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    /// Half extents (rect) or radius in `rx` (disc).
    pub rx: f64,
    pub ry: f64,
    pub intensity: f64,
}

impl ToyShape {
    fn contains(&self, u: f64, v: f64) -> bool {
        match self.kind {
            ShapeKind::Rect => (u - self.cx).abs() <= self.rx && (v - self.cy).abs() <= self.ry,
            ShapeKind::Disc => (u - self.cx).powi(2) + (v - self.cy).powi(2) <= self.rx * self.rx,
        }
    }
}

/// Parameters of a procedural HR image: a 4x4 coarse field plus shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyImageSpec {
    pub coarse: [[f64; 4]; 4],
    pub shapes: Vec<ToyShape>,
}

const SUPERSAMPLE: usize = 4;

impl ToyImageSpec {
    pub fn sample(rng: &mut impl Rng, max_shapes: usize) -> Self {
        let base = rng.random_range(0.2..0.8);
        let mut coarse = [[0.0; 4]; 4];
        for row in &mut coarse {
            for v in row.iter_mut() {
                *v = (base + rng.random_range(-0.2..0.2f64)).clamp(0.0, 1.0);
            }
        }
        let count = if max_shapes == 0 { 0 } else { rng.random_range(1..=max_shapes) };
        let shapes = (0..count)
            .map(|_| {
                let kind = if rng.random_bool(0.5) { ShapeKind::Rect } else { ShapeKind::Disc };
                ToyShape {
                    kind,
                    cx: rng.random_range(0.15..0.85),
                    cy: rng.random_range(0.15..0.85),
                    rx: rng.random_range(0.08..0.25),
                    ry: rng.random_range(0.08..0.25),
                    intensity: rng.random_range(0.0..1.0),
                }
            })
            .collect();
        Self { coarse, shapes }
    }

    /// Bilinear upsampling of the coarse field, shapes composited with
    /// supersampled coverage, then clamped to `[0, 1]`. Output dims `[1, H, W]`.
    pub fn render(&self, h: usize, w: usize) -> Tensor<f32> {
        let coarse_at = |fy: f64, fx: f64| -> f64 {
            let gy = ((fy * 4.0) - 0.5).clamp(0.0, 3.0);
            let gx = ((fx * 4.0) - 0.5).clamp(0.0, 3.0);
            let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(3), (x0 + 1).min(3));
            let (ty, tx) = (gy - y0 as f64, gx - x0 as f64);
            let c = &self.coarse;
            let top = c[y0][x0] * (1.0 - tx) + c[y0][x1] * tx;
            let bot = c[y1][x0] * (1.0 - tx) + c[y1][x1] * tx;
            top * (1.0 - ty) + bot * ty
        };
        Tensor::from_fn(&[1, h, w], |idx| {
            let (py, px) = (idx / w, idx % w);
            let mut v = coarse_at((py as f64 + 0.5) / h as f64, (px as f64 + 0.5) / w as f64);
            for shape in &self.shapes {
                let mut hits = 0;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let u = (px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64) / w as f64;
                        let vv = (py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64) / h as f64;
                        hits += usize::from(shape.contains(u, vv));
                    }
                }
                let cov = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
                v = v * (1.0 - cov) + shape.intensity * cov;
            }
            v.clamp(0.0, 1.0) as f32
        })
    }
}

/// Procedural HR image `[1, H, W]` with values in `[0, 1]`.
pub fn generate_toy_hr(rng: &mut impl Rng, dims: (usize, usize), max_shapes: usize) -> Tensor<f32> {
    ToyImageSpec::sample(rng, max_shapes).render(dims.0, dims.1)
}

pub const DEFAULT_MAX_SHAPES: usize = 4;

/// LR–HR pairs with the ground-truth kernel of each pair.
#[derive(Clone, Debug)]
pub struct PairedDataset {
    pub hr: Vec<Tensor<f32>>,
    pub lr: Vec<Tensor<f32>>,
    pub kernels: Vec<GaussianKernel>,
    pub scale: usize,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.hr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hr.is_empty()
    }

    /// Pairs `[start, end)` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            hr: self.hr[start..end].to_vec(),
            lr: self.lr[start..end].to_vec(),
            kernels: self.kernels[start..end].to_vec(),
            scale: self.scale,
        }
    }

    pub fn hr_dims(&self) -> Option<(usize, usize)> {
        self.hr.first().map(|t| (t.dims()[1], t.dims()[2]))
    }

    /// Check counts and that every LR image is the degradation of its HR image.
    pub fn verify(&self) -> Result<(), DegradationError> {
        if self.hr.len() != self.lr.len() || self.hr.len() != self.kernels.len() {
            return Err(DegradationError::Dimension("pair counts differ".into()));
        }
        for (i, ((hr, lr), k)) in self.hr.iter().zip(&self.lr).zip(&self.kernels).enumerate() {
            if &degrade(hr, k.as_kernel(), self.scale)? != lr {
                return Err(DegradationError::Dimension(format!("pair {i}: lr != degrade(hr)")));
            }
        }
        Ok(())
    }
}

/// `n` pairs, each from its own stream derived from `(seed, index)`.
pub fn synth_dataset(seed: u64, n: usize, scale: usize, dims: (usize, usize)) -> Result<PairedDataset, DegradationError> {
    if n == 0 {
        return Err(DegradationError::Dimension("dataset needs at least one pair".into()));
    }
    let mut ds = PairedDataset { hr: Vec::with_capacity(n), lr: Vec::with_capacity(n), kernels: Vec::with_capacity(n), scale };
    for i in 0..n {
        let mut r = rng::stream(seed, i as u64);
        let hr = generate_toy_hr(&mut r, dims, DEFAULT_MAX_SHAPES);
        let kernel = GaussianKernel::sample(&mut r);
        let lr = degrade(&hr, kernel.as_kernel(), scale)?;
        ds.hr.push(hr);
        ds.lr.push(lr);
        ds.kernels.push(kernel);
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotropic_kernel_ignores_rotation() {
        let a = GaussianKernel::new(9, 1.7, 1.7, 0.0).unwrap();
        let b = GaussianKernel::new(9, 1.7, 1.7, 1.234).unwrap();
        for (x, y) in a.weights().iter().zip(b.weights()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn unit_gaussian_on_7x7_grid() {
        let k = GaussianKernel::new(7, 1.0, 1.0, 0.0).unwrap();
        let mut oracle = Vec::new();
        for i in -3i32..=3 {
            for j in -3i32..=3 {
                oracle.push((-(f64::from(i * i + j * j)) / 2.0).exp());
            }
        }
        let total: f64 = oracle.iter().sum();
        for (w, o) in k.weights().iter().zip(&oracle) {
            assert!((w - o / total).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_kernels_peak_at_centre() {
        let mut r = rng::seeded(3);
        for _ in 0..200 {
            let k = GaussianKernel::sample(&mut r);
            let c = k.weights()[k.size() * k.size() / 2];
            assert!(k.weights().iter().all(|&w| w <= c));
            assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn delta_kernel_unit_scale_is_identity() {
        let mut r = rng::seeded(1);
        let hr = generate_toy_hr(&mut r, (16, 16), 3);
        let out = degrade(&hr, &Kernel2d::delta(7).unwrap(), 1).unwrap();
        assert_eq!(out, hr);
    }

    #[test]
    fn constant_image_interior_is_preserved() {
        let hr = Tensor::full(&[1, 32, 32], 0.6f32);
        let k = GaussianKernel::new(9, 2.0, 0.5, 0.3).unwrap();
        let lr = degrade(&hr, k.as_kernel(), 4).unwrap();
        assert_eq!(lr.dims(), &[1, 8, 8]);
        // interior LR pixels whose 9x9 footprint stays inside the image
        for oy in 1..7 {
            for ox in 1..7 {
                assert!((lr.data()[oy * 8 + ox] - 0.6).abs() < 1e-6);
            }
        }
        assert!(lr.data()[0] < 0.6 - 1e-3);
    }

    #[test]
    fn degrade_rejects_non_divisible() {
        let hr = Tensor::full(&[1, 10, 10], 0.5f32);
        let k = GaussianKernel::new(7, 1.0, 1.0, 0.0).unwrap();
        assert!(matches!(degrade(&hr, k.as_kernel(), 4), Err(DegradationError::Dimension(_))));
    }

    #[test]
    fn constant_field_without_shapes_is_constant() {
        let spec = ToyImageSpec { coarse: [[0.37; 4]; 4], shapes: vec![] };
        let img = spec.render(32, 32);
        assert!(img.data().iter().all(|&v| (v - 0.37).abs() < 1e-7));
    }

    #[test]
    fn toy_images_are_deterministic_and_in_range() {
        let a = generate_toy_hr(&mut rng::seeded(42), (32, 32), 4);
        let b = generate_toy_hr(&mut rng::seeded(42), (32, 32), 4);
        assert_eq!(a, b);
        for s in 0..50 {
            let img = generate_toy_hr(&mut rng::seeded(s), (32, 32), 4);
            assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn dataset_shapes_and_invariant() {
        let ds = synth_dataset(11, 3, 4, (32, 32)).unwrap();
        assert_eq!(ds.lr[0].dims(), &[1, 8, 8]);
        ds.verify().unwrap();
        assert!(synth_dataset(11, 0, 4, (32, 32)).is_err());
    }

    #[test]
    fn embedding_centres_kernel() {
        let k = GaussianKernel::new(7, 1.0, 1.0, 0.0).unwrap();
        let e = k.embedded(21);
        assert!((e.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(e[10 * 21 + 10], k.weights()[24]);
        assert_eq!(e[0], 0.0);
    }
}
