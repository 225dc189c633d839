//! Per-sample convolution kernels (im2col + GEMM), shared by the static
//! convolution op and by callers that bring their own per-sample weights.

use crate::real::{gemm, MatRef};
use crate::Real;

/// Geometry of a square-kernel 2-D convolution over one CHW sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(in_channels: usize, height: usize, width: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        assert!(kernel >= 1 && stride >= 1, "kernel and stride must be positive");
        assert!(height + 2 * pad >= kernel && width + 2 * pad >= kernel, "kernel larger than padded input");
        let out_h = (height + 2 * pad - kernel) / stride + 1;
        let out_w = (width + 2 * pad - kernel) / stride + 1;
        ConvGeometry { in_channels, height, width, kernel, stride, pad, out_h, out_w }
    }

    /// Rows of the unfolded input matrix (`C·k·k`).
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    /// 1×1 stride-1 unpadded: the input already is its own unfolding.
    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn valid_range(&self, k_off: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        // output positions o with 0 <= o*stride + k_off - pad < extent
        let lo = if self.pad > k_off { (self.pad - k_off).div_ceil(self.stride) } else { 0 };
        let hi_num = extent + self.pad;
        let hi = if hi_num > k_off { (hi_num - k_off).div_ceil(self.stride).min(out_extent) } else { 0 };
        (lo.min(hi), hi)
    }
}

/// Unfolds `x` (C×H×W) into `col` ((C·k·k) × (out_h·out_w)).
pub fn im2col<T: Real>(g: &ConvGeometry, x: &[T], col: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad);
    let (ow, ohw) = (g.out_w, g.out_pixels());
    debug_assert_eq!(x.len(), g.in_len());
    debug_assert!(col.len() >= g.patch_len() * ohw);
    for c in 0..g.in_channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.height, g.out_h);
            for kx in 0..k {
                let (ox_lo, ox_hi) = g.valid_range(kx, g.width, g.out_w);
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * ohw..(row + 1) * ohw];
                for oy in 0..g.out_h {
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if oy < oy_lo || oy >= oy_hi || ox_lo >= ox_hi {
                        line.fill(T::zero());
                        continue;
                    }
                    let iy = oy * s + ky - p;
                    let src = &plane[iy * g.width..(iy + 1) * g.width];
                    line[..ox_lo].fill(T::zero());
                    line[ox_hi..].fill(T::zero());
                    if s == 1 {
                        let start = ox_lo + kx - p;
                        line[ox_lo..ox_hi].copy_from_slice(&src[start..start + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            line[ox] = src[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds `col` back, accumulating into `dx`.
pub fn col2im_add<T: Real>(g: &ConvGeometry, col: &[T], dx: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad);
    let (ow, ohw) = (g.out_w, g.out_pixels());
    for c in 0..g.in_channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.height, g.out_h);
            for kx in 0..k {
                let (ox_lo, ox_hi) = g.valid_range(kx, g.width, g.out_w);
                if ox_lo >= ox_hi {
                    continue;
                }
                let row = (c * k + ky) * k + kx;
                let src = &col[row * ohw..(row + 1) * ohw];
                for oy in oy_lo..oy_hi {
                    let iy = oy * s + ky - p;
                    let line = &src[oy * ow..(oy + 1) * ow];
                    let dst = &mut plane[iy * g.width..(iy + 1) * g.width];
                    for ox in ox_lo..ox_hi {
                        dst[ox * s + kx - p] += line[ox];
                    }
                }
            }
        }
    }
}

/// Scratch buffer reused across samples.
#[derive(Default)]
pub struct Scratch<T> {
    col: Vec<T>,
    dcol: Vec<T>,
}

impl<T: Real> Scratch<T> {
    pub fn new() -> Self {
        Scratch { col: Vec::new(), dcol: Vec::new() }
    }
}

fn unfolded<'a, T: Real>(g: &ConvGeometry, x: &'a [T], buf: &'a mut Vec<T>) -> &'a [T] {
    if g.is_pointwise() {
        x
    } else {
        buf.resize(g.patch_len() * g.out_pixels(), T::zero());
        im2col(g, x, buf);
        buf
    }
}

/// `y (out_c × out_h·out_w) = w (out_c × C·k·k) ⊛ x + bias`.
pub fn conv_forward_sample<T: Real>(
    g: &ConvGeometry,
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    out_c: usize,
    y: &mut [T],
    scratch: &mut Scratch<T>,
) {
    let (kl, ohw) = (g.patch_len(), g.out_pixels());
    assert_eq!(w.len(), out_c * kl, "weight length mismatch");
    let col = unfolded(g, x, &mut scratch.col);
    gemm(T::one(), MatRef::row_major(w, out_c, kl), MatRef::row_major(col, kl, ohw), T::zero(), y);
    if let Some(b) = bias {
        for (co, &bv) in b.iter().enumerate().take(out_c) {
            for v in &mut y[co * ohw..(co + 1) * ohw] {
                *v += bv;
            }
        }
    }
}

/// Gradients of [`conv_forward_sample`]. `gw`/`gb` accumulate; `gx` accumulates.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward_sample<T: Real>(
    g: &ConvGeometry,
    x: &[T],
    w: &[T],
    out_c: usize,
    gy: &[T],
    gw: Option<&mut [T]>,
    gb: Option<&mut [T]>,
    gx: Option<&mut [T]>,
    scratch: &mut Scratch<T>,
) {
    let (kl, ohw) = (g.patch_len(), g.out_pixels());
    if let Some(gb) = gb {
        for (co, b) in gb.iter_mut().enumerate().take(out_c) {
            *b += gy[co * ohw..(co + 1) * ohw].iter().copied().sum::<T>();
        }
    }
    if let Some(gw) = gw {
        let col = unfolded(g, x, &mut scratch.col);
        gemm(T::one(), MatRef::row_major(gy, out_c, ohw), MatRef::transposed(col, ohw, kl), T::one(), gw);
    }
    if let Some(gx) = gx {
        if g.is_pointwise() {
            gemm(T::one(), MatRef::transposed(w, kl, out_c), MatRef::row_major(gy, out_c, ohw), T::one(), gx);
        } else {
            scratch.dcol.resize(kl * ohw, T::zero());
            gemm(T::one(), MatRef::transposed(w, kl, out_c), MatRef::row_major(gy, out_c, ohw), T::zero(), &mut scratch.dcol);
            col2im_add(g, &scratch.dcol, gx);
        }
    }
}

/// Direct (loop-nest) convolution of one sample; the reference the
/// im2col path is checked against.
pub fn conv_direct_sample<T: Real>(g: &ConvGeometry, x: &[T], w: &[T], bias: Option<&[T]>, out_c: usize) -> Vec<T> {
    let k = g.kernel;
    let mut y = vec![T::zero(); out_c * g.out_pixels()];
    for co in 0..out_c {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut acc = bias.map_or(T::zero(), |b| b[co]);
                for ci in 0..g.in_channels {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                                continue;
                            }
                            let xv = x[(ci * g.height + iy as usize) * g.width + ix as usize];
                            acc += w[((co * g.in_channels + ci) * k + ky) * k + kx] * xv;
                        }
                    }
                }
                y[(co * g.out_h + oy) * g.out_w + ox] = acc;
            }
        }
    }
    y
}
