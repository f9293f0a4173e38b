//! Low-level kernels: patch unfolding for convolutions and layout permutes.

use ndarray::{Array2, Array4, ArrayView2, ArrayView4};

/// Square-kernel convolution geometry shared by forward and transposed convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub const fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self { kernel, stride, pad }
    }

    /// Output length of a strided convolution over `len` input positions.
    pub fn out_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.pad;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    /// Output length of the transposed convolution over `len` input positions.
    pub fn transposed_out_len(&self, len: usize) -> Option<usize> {
        ((len.max(1) - 1) * self.stride + self.kernel).checked_sub(2 * self.pad)
    }
}

/// Unfolds `x` (`N × C × H × W`) into a `(C·k·k) × (N·oh·ow)` patch matrix.
///
/// Column order is `(n, oy, ox)` row-major, which matches [`to_channel_major`].
pub fn im2col(x: ArrayView4<f32>, geom: ConvGeom, oh: usize, ow: usize) -> Array2<f32> {
    let x = x.as_standard_layout();
    let (n, c, h, w) = x.dim();
    let k = geom.kernel;
    let width = n * oh * ow;
    let mut cols = Array2::<f32>::zeros((c * k * k, width));
    let src = x.as_slice().expect("standard layout");
    let dst = cols.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let row_buf = &mut dst[row * width..(row + 1) * width];
                for b in 0..n {
                    let plane = &src[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * geom.stride + ki) as isize - geom.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let line = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let out = &mut row_buf[(b * oh + oy) * ow..(b * oh + oy + 1) * ow];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * geom.stride + kj) as isize - geom.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *o = line[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters-and-adds patch columns back into an `N × C × H × W` array.
pub fn col2im(
    cols: ArrayView2<f32>,
    dims: (usize, usize, usize, usize),
    geom: ConvGeom,
    oh: usize,
    ow: usize,
) -> Array4<f32> {
    let (n, c, h, w) = dims;
    let k = geom.kernel;
    let width = n * oh * ow;
    debug_assert_eq!(cols.dim(), (c * k * k, width));
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    let mut out = Array4::<f32>::zeros(dims);
    let dst = out.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let row_buf = &src[row * width..(row + 1) * width];
                for b in 0..n {
                    let plane = &mut dst[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * geom.stride + ki) as isize - geom.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let inp = &row_buf[(b * oh + oy) * ow..(b * oh + oy + 1) * ow];
                        for (ox, v) in inp.iter().enumerate() {
                            let ix = (ox * geom.stride + kj) as isize - geom.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                line[ix as usize] += *v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `N × C × H × W` → `C × (N·H·W)`.
pub fn to_channel_major(x: ArrayView4<f32>) -> Array2<f32> {
    let (n, c, h, w) = x.dim();
    x.permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, n * h * w))
        .expect("contiguous")
}

/// `C × (N·H·W)` → `N × C × H × W`.
pub fn from_channel_major(m: Array2<f32>, dims: (usize, usize, usize, usize)) -> Array4<f32> {
    let (n, c, h, w) = dims;
    m.into_shape_with_order((c, n, h, w))
        .expect("matching element count")
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
}

/// Batch ranges whose unfolded patch matrix stays under a fixed element budget.
pub(crate) fn batch_chunks(n: usize, per_item: usize) -> impl Iterator<Item = (usize, usize)> {
    const BUDGET: usize = 1 << 24;
    let step = (BUDGET / per_item.max(1)).clamp(1, n.max(1));
    (0..n).step_by(step).map(move |lo| (lo, (lo + step).min(n)))
}
