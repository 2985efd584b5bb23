//! Explicit linear degradation operators, their Moore–Penrose pseudo-inverses
//! and the range-null rectification used by DDNM.
//!
//! An operator acts on one spatial plane, vectorised row-major. Multi-channel
//! images are handled blockwise, channel-major, with the same matrix per
//! channel.

mod matrix;
mod svd;

use thiserror::Error;

use crate::tensor::{conv_output_len, Tensor};

pub use matrix::Matrix;
pub use svd::{svd, SvdResult};

/// Relative singular-value cutoff used when no explicit tolerance is given.
pub const DEFAULT_PINV_RTOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinopsError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("svd did not converge after {sweeps} sweeps (max off-orthogonality {residual:e})")]
    Numerical { sweeps: usize, residual: f64 },
}

/// Square spatial kernel, row-major, used as a cross-correlation filter.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel2d {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel2d {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self, LinopsError> {
        if size % 2 == 0 {
            return Err(LinopsError::Contract(format!("kernel size {size} must be odd")));
        }
        if weights.len() != size * size {
            return Err(LinopsError::Dimension(format!(
                "kernel of size {size} needs {} weights, got {}",
                size * size,
                weights.len()
            )));
        }
        Ok(Self { size, weights })
    }

    pub fn delta(size: usize) -> Result<Self, LinopsError> {
        let mut w = vec![0.0; size * size];
        w[size * size / 2] = 1.0;
        Self::new(size, w)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.size + j]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OperatorKind {
    AvgPool { scale: usize },
    ConvStride { scale: usize, kernel: Kernel2d },
    Dense,
}

/// A degradation `A` (d x D) with its SVD and pseudo-inverse computed eagerly.
#[derive(Clone, Debug)]
pub struct LinearOperator {
    kind: OperatorKind,
    hr: (usize, usize),
    lr: (usize, usize),
    matrix: Matrix,
    svd: SvdResult,
    pinv: Matrix,
}

impl LinearOperator {
    /// Wrap an explicit matrix. `hr`/`lr` give the plane shapes the columns and
    /// rows vectorise.
    pub fn from_matrix(matrix: Matrix, hr: (usize, usize), lr: (usize, usize)) -> Result<Self, LinopsError> {
        Self::build(OperatorKind::Dense, matrix, hr, lr)
    }

    fn build(kind: OperatorKind, matrix: Matrix, hr: (usize, usize), lr: (usize, usize)) -> Result<Self, LinopsError> {
        if matrix.cols() != hr.0 * hr.1 || matrix.rows() != lr.0 * lr.1 {
            return Err(LinopsError::Dimension(format!(
                "{}x{} matrix does not map {hr:?} to {lr:?}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        if matrix.rows() > matrix.cols() {
            return Err(LinopsError::Contract(format!(
                "degradation must not enlarge: d = {} > D = {}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        let svd = svd::svd(&matrix)?;
        let pinv = pseudo_inverse(&svd, None);
        Ok(Self { kind, hr, lr, matrix, svd, pinv })
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn hr_dims(&self) -> (usize, usize) {
        self.hr
    }

    pub fn lr_dims(&self) -> (usize, usize) {
        self.lr
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn pinv(&self) -> &Matrix {
        &self.pinv
    }

    pub fn svd(&self) -> &SvdResult {
        &self.svd
    }

    /// `A x` for one vectorised plane.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, LinopsError> {
        check_len("A x", x.len(), self.matrix.cols())?;
        Ok(self.matrix.matvec(x))
    }

    /// `A† y` for one vectorised plane.
    pub fn apply_pinv(&self, y: &[f64]) -> Result<Vec<f64>, LinopsError> {
        check_len("A† y", y.len(), self.matrix.rows())?;
        Ok(self.pinv.matvec(y))
    }

    /// `A x` evaluated directly from the operator's structure (pooling or strided
    /// correlation) rather than through the matrix.
    pub fn apply_structured(&self, x: &[f64]) -> Result<Vec<f64>, LinopsError> {
        check_len("A x", x.len(), self.matrix.cols())?;
        let (h, w) = self.hr;
        let (ho, wo) = self.lr;
        match &self.kind {
            OperatorKind::AvgPool { scale } => {
                let s = *scale;
                let mut out = vec![0.0; ho * wo];
                for y in 0..h {
                    for x_ in 0..w {
                        out[(y / s) * wo + x_ / s] += x[y * w + x_];
                    }
                }
                let area = (s * s) as f64;
                Ok(out.into_iter().map(|v| v / area).collect())
            }
            OperatorKind::ConvStride { scale, kernel } => Ok(strided_correlate(x, self.hr, kernel, *scale, self.lr)),
            OperatorKind::Dense => Ok(self.matrix.matvec(x)),
        }
    }

    /// Apply `A` to every plane of an `[.., C, H, W]` tensor.
    pub fn apply_tensor(&self, x: &Tensor<f32>) -> Result<Tensor<f32>, LinopsError> {
        self.map_planes(x, self.hr, self.lr, |p| self.apply(p))
    }

    /// Apply `A†` to every plane of an `[.., C, h, w]` tensor.
    pub fn apply_pinv_tensor(&self, y: &Tensor<f32>) -> Result<Tensor<f32>, LinopsError> {
        self.map_planes(y, self.lr, self.hr, |p| self.apply_pinv(p))
    }

    fn map_planes(
        &self,
        t: &Tensor<f32>,
        from: (usize, usize),
        to: (usize, usize),
        f: impl Fn(&[f64]) -> Result<Vec<f64>, LinopsError>,
    ) -> Result<Tensor<f32>, LinopsError> {
        let dims = t.dims();
        let rank = dims.len();
        if rank < 2 || (dims[rank - 2], dims[rank - 1]) != from {
            return Err(LinopsError::Dimension(format!("tensor {dims:?} does not end in plane {from:?}")));
        }
        let plane = from.0 * from.1;
        let mut out = Vec::with_capacity(t.numel() / plane * to.0 * to.1);
        for chunk in t.data().chunks(plane) {
            let v: Vec<f64> = chunk.iter().map(|&x| f64::from(x)).collect();
            out.extend(f(&v)?.into_iter().map(|x| x as f32));
        }
        let mut odims = dims.to_vec();
        odims[rank - 2] = to.0;
        odims[rank - 1] = to.1;
        Tensor::new(odims, out).map_err(|e| LinopsError::Dimension(e.to_string()))
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<(), LinopsError> {
    if got != want {
        return Err(LinopsError::Dimension(format!("{what}: vector length {got}, expected {want}")));
    }
    Ok(())
}

fn strided_correlate(x: &[f64], hr: (usize, usize), k: &Kernel2d, s: usize, lr: (usize, usize)) -> Vec<f64> {
    let (h, w) = hr;
    let pad = (k.size() / 2) as isize;
    let mut out = vec![0.0; lr.0 * lr.1];
    for oy in 0..lr.0 {
        for ox in 0..lr.1 {
            let mut acc = 0.0;
            for ki in 0..k.size() {
                let iy = (oy * s + ki) as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kj in 0..k.size() {
                    let ix = (ox * s + kj) as isize - pad;
                    if ix >= 0 && ix < w as isize {
                        acc += k.at(ki, kj) * x[iy as usize * w + ix as usize];
                    }
                }
            }
            out[oy * lr.1 + ox] = acc;
        }
    }
    out
}

/// Average pooling by `scale`: each LR pixel is the mean of one `s x s` patch.
pub fn build_avgpool_operator(scale: usize, hr: (usize, usize)) -> Result<LinearOperator, LinopsError> {
    if scale < 1 || hr.0 % scale != 0 || hr.1 % scale != 0 {
        return Err(LinopsError::Dimension(format!("scale {scale} does not divide {}x{}", hr.0, hr.1)));
    }
    let lr = (hr.0 / scale, hr.1 / scale);
    let mut m = Matrix::zeros(lr.0 * lr.1, hr.0 * hr.1);
    let inv = 1.0 / (scale * scale) as f64;
    for y in 0..hr.0 {
        for x in 0..hr.1 {
            m[((y / scale) * lr.1 + x / scale, y * hr.1 + x)] = inv;
        }
    }
    LinearOperator::build(OperatorKind::AvgPool { scale }, m, hr, lr)
}

/// Strided correlation with `kernel`, zero padding `(k − 1) / 2`, stride `scale`.
pub fn build_conv_stride_operator(
    kernel: &Kernel2d,
    scale: usize,
    hr: (usize, usize),
) -> Result<LinearOperator, LinopsError> {
    if scale < 1 || hr.0 % scale != 0 || hr.1 % scale != 0 {
        return Err(LinopsError::Dimension(format!("scale {scale} does not divide {}x{}", hr.0, hr.1)));
    }
    let pad = kernel.size() / 2;
    let lr = (
        conv_output_len(hr.0, kernel.size(), scale, pad).expect("odd kernel with half padding always fits"),
        conv_output_len(hr.1, kernel.size(), scale, pad).expect("odd kernel with half padding always fits"),
    );
    let mut m = Matrix::zeros(lr.0 * lr.1, hr.0 * hr.1);
    for oy in 0..lr.0 {
        for ox in 0..lr.1 {
            let row = oy * lr.1 + ox;
            for ki in 0..kernel.size() {
                let iy = (oy * scale + ki) as isize - pad as isize;
                if iy < 0 || iy >= hr.0 as isize {
                    continue;
                }
                for kj in 0..kernel.size() {
                    let ix = (ox * scale + kj) as isize - pad as isize;
                    if ix >= 0 && ix < hr.1 as isize {
                        m[(row, iy as usize * hr.1 + ix as usize)] += kernel.at(ki, kj);
                    }
                }
            }
        }
    }
    LinearOperator::build(OperatorKind::ConvStride { scale, kernel: kernel.clone() }, m, hr, lr)
}

/// `A† = V Σ⁺ Uᵀ`, treating `σ ≤ tol` as zero. `tol` defaults to
/// `1e-10 · σ₁`.
pub fn pseudo_inverse(svd: &SvdResult, tol: Option<f64>) -> Matrix {
    let smax = svd.sigma.first().copied().unwrap_or(0.0);
    let tol = tol.unwrap_or(DEFAULT_PINV_RTOL * smax);
    // V Σ⁺ (n x r), then times Uᵀ (r x m).
    let mut vs = svd.v.clone();
    for i in 0..vs.rows() {
        for (j, &s) in svd.sigma.iter().enumerate() {
            vs[(i, j)] = if s > tol { vs[(i, j)] / s } else { 0.0 };
        }
    }
    vs.matmul(&svd.u.transpose())
}

/// `A† y + (I − A†A) x0t` for one vectorised plane.
pub fn range_null_rectify(x0t: &[f64], y: &[f64], op: &LinearOperator) -> Result<Vec<f64>, LinopsError> {
    let ax = op.apply(x0t)?;
    let back = op.apply_pinv(&ax)?;
    let range = op.apply_pinv(y)?;
    Ok(range.iter().zip(x0t).zip(&back).map(|((r, x), b)| r + x - b).collect())
}

/// Plane-wise [`range_null_rectify`] over `[.., C, H, W]` / `[.., C, h, w]` tensors.
pub fn range_null_rectify_tensor(
    x0t: &Tensor<f32>,
    y: &Tensor<f32>,
    op: &LinearOperator,
) -> Result<Tensor<f32>, LinopsError> {
    let (hp, lp) = (op.hr.0 * op.hr.1, op.lr.0 * op.lr.1);
    if x0t.numel() % hp != 0 || y.numel() % lp != 0 || x0t.numel() / hp != y.numel() / lp {
        return Err(LinopsError::Dimension(format!(
            "x0t {:?} and y {:?} do not match operator {:?} -> {:?}",
            x0t.dims(),
            y.dims(),
            op.hr,
            op.lr
        )));
    }
    let mut out = Vec::with_capacity(x0t.numel());
    for (xc, yc) in x0t.data().chunks(hp).zip(y.data().chunks(lp)) {
        let xv: Vec<f64> = xc.iter().map(|&v| f64::from(v)).collect();
        let yv: Vec<f64> = yc.iter().map(|&v| f64::from(v)).collect();
        out.extend(range_null_rectify(&xv, &yv, op)?.into_iter().map(|v| v as f32));
    }
    Tensor::new(x0t.dims().to_vec(), out).map_err(|e| LinopsError::Dimension(e.to_string()))
}

/// Worst relative violation of the four Moore–Penrose identities.
#[derive(Clone, Copy, Debug)]
pub struct PenroseResiduals {
    pub a_ap_a: f64,
    pub ap_a_ap: f64,
    pub a_ap_sym: f64,
    pub ap_a_sym: f64,
}

impl PenroseResiduals {
    pub fn max(&self) -> f64 {
        self.a_ap_a.max(self.ap_a_ap).max(self.a_ap_sym).max(self.ap_a_sym)
    }
}

pub fn penrose_residuals(a: &Matrix, ap: &Matrix) -> PenroseResiduals {
    let a_ap = a.matmul(ap);
    let ap_a = ap.matmul(a);
    PenroseResiduals {
        a_ap_a: a_ap.matmul(a).rel_diff(a),
        ap_a_ap: ap.matmul(&a_ap).rel_diff(ap),
        a_ap_sym: a_ap.asymmetry(),
        ap_a_sym: ap_a.asymmetry(),
    }
}
