//! im2col convolution kernels shared by the 1-D and 2-D layers.

use crate::scalar::{MatRef, Scalar};

/// Geometry of a cross-correlation over `[N, Cin, H, W]` inputs.
///
/// 1-D convolutions use `h = kh = 1`, `pad_h = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn in_image(&self) -> usize {
        self.cin * self.h * self.w
    }
}

/// Output columns `[lo, hi)` whose input column `ox * stride + kj - pad`
/// falls inside `[0, w)`.
#[inline]
fn valid_range(kj: usize, pad: usize, stride: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = if pad > kj { (pad - kj).div_ceil(stride) } else { 0 };
    let hi = if w + pad > kj { ((w + pad - kj - 1) / stride + 1).min(wo) } else { 0 };
    (lo.min(hi), hi)
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_range(kj, g.pad_w, g.stride, g.w, g.wo);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad_h as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &x[(ci * g.h + iy as usize) * g.w..][..g.w];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    let first = lo * g.stride + kj - g.pad_w;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[first..first + (hi - lo)]);
                    } else {
                        for (k, v) in line[lo..hi].iter_mut().enumerate() {
                            *v = src[first + k * g.stride];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_acc<T: Scalar>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_range(kj, g.pad_w, g.stride, g.w, g.wo);
                if lo >= hi {
                    continue;
                }
                let first = lo * g.stride + kj - g.pad_w;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(ci * g.h + iy as usize) * g.w..][..g.w];
                    let line = &src[oy * g.wo + lo..oy * g.wo + hi];
                    for (k, &v) in line.iter().enumerate() {
                        let d = &mut dst[first + k * g.stride];
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Scalar>(g: &ConvGeom, x: &[T], kernel: &[T]) -> Vec<T> {
    let plane = g.out_plane();
    let rows = g.col_rows();
    let mut cols = vec![T::zero(); rows * plane];
    let mut out = vec![T::zero(); g.n * g.cout * plane];
    for b in 0..g.n {
        im2col(g, &x[b * g.in_image()..(b + 1) * g.in_image()], &mut cols);
        T::gemm(
            g.cout,
            rows,
            plane,
            T::one(),
            MatRef::row_major(kernel, rows),
            MatRef::row_major(&cols, plane),
            T::zero(),
            &mut out[b * g.cout * plane..(b + 1) * g.cout * plane],
        );
    }
    out
}

/// Returns `(d_input, d_kernel)`; either is skipped when not requested.
pub(crate) fn backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    kernel: &[T],
    dout: &[T],
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let plane = g.out_plane();
    let rows = g.col_rows();
    let mut cols = vec![T::zero(); rows * plane];
    let mut dx = want_input.then(|| vec![T::zero(); x.len()]);
    let mut dk = want_kernel.then(|| vec![T::zero(); kernel.len()]);
    for b in 0..g.n {
        let dout_b = &dout[b * g.cout * plane..(b + 1) * g.cout * plane];
        if let Some(dk) = dk.as_mut() {
            im2col(g, &x[b * g.in_image()..(b + 1) * g.in_image()], &mut cols);
            T::gemm(
                g.cout,
                plane,
                rows,
                T::one(),
                MatRef::row_major(dout_b, plane),
                MatRef::transposed(&cols, plane),
                T::one(),
                dk,
            );
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(
                rows,
                g.cout,
                plane,
                T::one(),
                MatRef::transposed(kernel, rows),
                MatRef::row_major(dout_b, plane),
                T::zero(),
                &mut cols,
            );
            col2im_acc(g, &cols, &mut dx[b * g.in_image()..(b + 1) * g.in_image()]);
        }
    }
    (dx, dk)
}
