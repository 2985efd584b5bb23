use super::Element;

/// Output extent of a zero-padded strided convolution: `floor((len + 2*pad - k) / stride) + 1`.
/// Returns `None` when the kernel does not fit.
pub fn conv_output_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || k == 0 || len + 2 * pad < k {
        return None;
    }
    Some((len + 2 * pad - k) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }
    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
    pub fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }
    pub fn out_len(&self) -> usize {
        self.cout * self.ho * self.wo
    }
}

/// Unfold one image (`cin*h*w`) into `[cin*k*k, ho*wo]` patch columns.
pub(crate) fn im2col<E: Element>(x: &[E], g: &ConvGeom, cols: &mut [E]) {
    let ncols = g.col_cols();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let seg = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        seg.fill(E::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in seg.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize { E::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch columns back into an image buffer.
pub(crate) fn col2im_add<E: Element>(cols: &[E], g: &ConvGeom, dx: &mut [E]) {
    let ncols = g.col_cols();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<E: Element>(x: &[E], w: &[E], g: &ConvGeom) -> Vec<E> {
    let mut out = vec![E::zero(); g.n * g.out_len()];
    let mut cols = vec![E::zero(); g.col_rows() * g.col_cols()];
    for n in 0..g.n {
        im2col(&x[n * g.in_len()..(n + 1) * g.in_len()], g, &mut cols);
        E::gemm(
            g.cout,
            g.col_rows(),
            g.col_cols(),
            w,
            false,
            &cols,
            false,
            &mut out[n * g.out_len()..(n + 1) * g.out_len()],
            false,
        );
    }
    out
}

/// Returns `(dx, dw)`; either may be skipped.
pub(crate) fn conv2d_backward<E: Element>(
    x: &[E],
    w: &[E],
    dout: &[E],
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<E>>, Option<Vec<E>>) {
    let mut dx = need_dx.then(|| vec![E::zero(); g.n * g.in_len()]);
    let mut dw = need_dw.then(|| vec![E::zero(); w.len()]);
    let mut cols = vec![E::zero(); g.col_rows() * g.col_cols()];
    for n in 0..g.n {
        let go = &dout[n * g.out_len()..(n + 1) * g.out_len()];
        if let Some(dw) = dw.as_mut() {
            im2col(&x[n * g.in_len()..(n + 1) * g.in_len()], g, &mut cols);
            E::gemm(g.cout, g.col_cols(), g.col_rows(), go, false, &cols, true, dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            E::gemm(g.col_rows(), g.cout, g.col_cols(), w, true, go, false, &mut cols, false);
            col2im_add(&cols, g, &mut dx[n * g.in_len()..(n + 1) * g.in_len()]);
        }
    }
    (dx, dw)
}

/// Nearest-neighbour upsampling of `[planes, h, w]` by an integer factor.
pub(crate) fn upsample_nearest<E: Element>(x: &[E], planes: usize, h: usize, w: usize, s: usize) -> Vec<E> {
    let (ho, wo) = (h * s, w * s);
    let mut out = vec![E::zero(); planes * ho * wo];
    for p in 0..planes {
        for oy in 0..ho {
            let src = &x[(p * h + oy / s) * w..(p * h + oy / s + 1) * w];
            let dst = &mut out[(p * ho + oy) * wo..(p * ho + oy + 1) * wo];
            for (ox, v) in dst.iter_mut().enumerate() {
                *v = src[ox / s];
            }
        }
    }
    out
}

/// Block sum over `s x s` patches (the adjoint of nearest upsampling).
pub(crate) fn block_sum<E: Element>(x: &[E], planes: usize, h: usize, w: usize, s: usize) -> Vec<E> {
    let (ho, wo) = (h / s, w / s);
    let mut out = vec![E::zero(); planes * ho * wo];
    for p in 0..planes {
        for y in 0..h {
            let src = &x[(p * h + y) * w..(p * h + y + 1) * w];
            let dst = &mut out[(p * ho + y / s) * wo..(p * ho + y / s + 1) * wo];
            for (x_, &v) in src.iter().enumerate() {
                dst[x_ / s] += v;
            }
        }
    }
    out
}

/// Mean over `s x s` patches, accumulated and divided in 64-bit. For `f32`
/// storage this makes average pooling an exact left inverse of nearest upsampling.
pub(crate) fn avg_pool<E: Element>(x: &[E], planes: usize, h: usize, w: usize, s: usize) -> Vec<E> {
    let (ho, wo) = (h / s, w / s);
    let mut acc = vec![0.0f64; planes * ho * wo];
    for p in 0..planes {
        for y in 0..h {
            let src = &x[(p * h + y) * w..(p * h + y + 1) * w];
            let dst = &mut acc[(p * ho + y / s) * wo..(p * ho + y / s + 1) * wo];
            for (x_, &v) in src.iter().enumerate() {
                dst[x_ / s] += v.as_f64();
            }
        }
    }
    let area = (s * s) as f64;
    acc.into_iter().map(|v| E::of(v / area)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_len_formula() {
        assert_eq!(conv_output_len(32, 3, 1, 1), Some(32));
        assert_eq!(conv_output_len(32, 3, 2, 1), Some(16));
        assert_eq!(conv_output_len(32, 21, 4, 10), Some(8));
        assert_eq!(conv_output_len(2, 7, 1, 0), None);
    }

    #[test]
    fn upsample_then_block_sum_scales_by_area() {
        let x: Vec<f64> = (0..8).map(f64::from).collect();
        let up = upsample_nearest(&x, 2, 2, 2, 3);
        let back = block_sum(&up, 2, 6, 6, 3);
        for (a, b) in x.iter().zip(&back) {
            assert_eq!(*b, a * 9.0);
        }
    }
}
