//! Dense convolution and resampling kernels used by the graph ops.

use crate::scalar::{gemm, MatRef, Scalar};

/// Geometry of one 2D convolution over a single `[C, H, W]` plane stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, h: usize, w: usize, k: usize, stride: usize) -> Option<Self> {
        let pad = k / 2;
        if h + 2 * pad < k || w + 2 * pad < k || stride == 0 {
            return None;
        }
        let h_out = (h + 2 * pad - k) / stride + 1;
        let w_out = (w + 2 * pad - k) / stride + 1;
        Some(Self { c_in, h, w, k, stride, pad, h_out, w_out })
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn out_plane(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Unfolds `x` (`[C, H, W]`) into a `[C·k·k, H_out·W_out]` patch matrix.
pub(crate) fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.c_in {
        let xc = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oh in 0..g.h_out {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oh * g.w_out..(oh + 1) * g.w_out];
                    if ih < 0 || ih >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &xc[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, v) in line.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        *v = if iw < 0 || iw >= g.w as isize { T::zero() } else { src[iw as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back onto `[C, H, W]`.
pub(crate) fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.c_in {
        let xc = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oh in 0..g.h_out {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst = &mut xc[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for ow in 0..g.w_out {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dst[iw as usize] += src[oh * g.w_out + ow];
                        }
                    }
                }
            }
        }
    }
}

/// `out[c_out, plane] = weight[c_out, patch] · cols[patch, plane]`.
pub(crate) fn conv_forward<T: Scalar>(g: &ConvGeom, c_out: usize, weight: &[T], cols: &[T], out: &mut [T]) {
    gemm(
        MatRef::new(weight, c_out, g.patch_len()),
        MatRef::new(cols, g.patch_len(), g.out_plane()),
        T::zero(),
        out,
    );
}

/// Accumulates `dW += dOut · colsᵀ`.
pub(crate) fn conv_weight_grad<T: Scalar>(g: &ConvGeom, c_out: usize, d_out: &[T], cols: &[T], d_weight: &mut [T]) {
    gemm(
        MatRef::new(d_out, c_out, g.out_plane()),
        MatRef::new(cols, g.patch_len(), g.out_plane()).t(),
        T::one(),
        d_weight,
    );
}

/// `dCols = Wᵀ · dOut`.
pub(crate) fn conv_cols_grad<T: Scalar>(g: &ConvGeom, c_out: usize, weight: &[T], d_out: &[T], d_cols: &mut [T]) {
    gemm(
        MatRef::new(weight, c_out, g.patch_len()).t(),
        MatRef::new(d_out, c_out, g.out_plane()),
        T::zero(),
        d_cols,
    );
}

/// Nearest-neighbour ×2 upsampling of `planes` planes of size `h×w`.
pub(crate) fn upsample2<T: Scalar>(planes: usize, h: usize, w: usize, x: &[T]) -> Vec<T> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * h2 * w2];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
        for r in 0..h2 {
            for c in 0..w2 {
                dst[r * w2 + c] = src[(r / 2) * w + c / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sums each 2×2 block.
pub(crate) fn upsample2_adjoint<T: Scalar>(planes: usize, h: usize, w: usize, g: &[T]) -> Vec<T> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &g[p * h2 * w2..(p + 1) * h2 * w2];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for r in 0..h2 {
            for c in 0..w2 {
                dst[(r / 2) * w + c / 2] += src[r * w2 + c];
            }
        }
    }
    out
}
