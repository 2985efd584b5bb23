//! One-sided (Hestenes) Jacobi SVD.

use super::{LinopsError, Matrix};

const MAX_SWEEPS: usize = 80;
const ORTHO_TOL: f64 = 1e-15;

/// `A = U diag(sigma) Vᵀ` in thin form: for an `m x n` input with
/// `r = min(m, n)`, `U` is `m x r`, `V` is `n x r`, and `sigma` is sorted
/// descending.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.sigma.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul(&self.v.transpose())
    }

    pub fn rank(&self, tol: f64) -> usize {
        self.sigma.iter().filter(|&&s| s > tol).count()
    }
}

/// Singular value decomposition of any finite matrix.
pub fn svd(a: &Matrix) -> Result<SvdResult, LinopsError> {
    if a.data().iter().any(|v| !v.is_finite()) {
        return Err(LinopsError::Contract("svd input has non-finite entries".into()));
    }
    if a.rows() == 0 || a.cols() == 0 {
        return Err(LinopsError::Dimension(format!("empty {}x{} matrix", a.rows(), a.cols())));
    }
    if a.rows() >= a.cols() {
        let cols = (0..a.cols()).map(|j| (0..a.rows()).map(|i| a[(i, j)]).collect()).collect();
        let (u, sigma, v) = hestenes(cols, a.rows())?;
        Ok(SvdResult { u, sigma, v })
    } else {
        // Work on Aᵀ (tall) and swap the factors: A = V' Σ U'ᵀ.
        let cols = (0..a.rows()).map(|i| a.row(i).to_vec()).collect();
        let (u, sigma, v) = hestenes(cols, a.cols())?;
        Ok(SvdResult { u: v, sigma, v: u })
    }
}

/// Orthogonalise the columns of a tall `len x n` matrix given column-wise.
/// Returns `(U: len x n, sigma, V: n x n)`.
fn hestenes(mut w: Vec<Vec<f64>>, len: usize) -> Result<(Matrix, Vec<f64>, Matrix), LinopsError> {
    let n = w.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| f64::from(u8::from(i == j))).collect()).collect();
    let mut converged = false;
    let mut last_off = 0.0;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        last_off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (wp, wq) = (&w[p], &w[q]);
                    let mut a = 0.0;
                    let mut b = 0.0;
                    let mut g = 0.0;
                    for (x, y) in wp.iter().zip(wq) {
                        a += x * x;
                        b += y * y;
                        g += x * y;
                    }
                    (a, b, g)
                };
                if gamma == 0.0 {
                    continue;
                }
                let off = gamma.abs() / (alpha * beta).sqrt();
                last_off = last_off.max(off);
                if off <= ORTHO_TOL {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinopsError::Numerical { sweeps: MAX_SWEEPS, residual: last_off });
    }

    let norms: Vec<f64> = w.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let smax = norms[order[0]];
    let floor = smax * f64::EPSILON * (len.max(n) as f64);

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut null_slots = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        if norms[j] > floor && norms[j] > 0.0 {
            u_cols.push(w[j].iter().map(|x| x / norms[j]).collect());
            sigma.push(norms[j]);
        } else {
            u_cols.push(vec![0.0; len]);
            sigma.push(0.0);
            null_slots.push(k);
        }
    }
    complete_basis(&mut u_cols, &null_slots, len);

    let mut u = Matrix::zeros(len, n);
    let mut vm = Matrix::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        for i in 0..len {
            u[(i, k)] = u_cols[k][i];
        }
        for i in 0..n {
            vm[(i, k)] = v[j][i];
        }
    }
    Ok((u, sigma, vm))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fill the listed (zero) columns with unit vectors orthogonal to the rest.
fn complete_basis(cols: &mut [Vec<f64>], slots: &[usize], len: usize) {
    let mut candidate = 0;
    for &slot in slots {
        while candidate < len {
            let mut e = vec![0.0; len];
            e[candidate] = 1.0;
            candidate += 1;
            // Two Gram-Schmidt passes for numerical orthogonality.
            for _ in 0..2 {
                for (k, c) in cols.iter().enumerate() {
                    if k == slot {
                        continue;
                    }
                    let d: f64 = c.iter().zip(&e).map(|(a, b)| a * b).sum();
                    e.iter_mut().zip(c).for_each(|(x, y)| *x -= d * y);
                }
            }
            let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.5 {
                cols[slot] = e.into_iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}
