//! Raw forward/backward kernels over flat row-major buffers.

use super::tensor::{matmul, MatRef, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    pub fn new(c_in: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        Some(ConvGeom {
            c_in,
            h,
            w,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (w + 2 * pad - k) / stride + 1,
        })
    }

    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn out_pixels(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Input coordinate for output position `o` and kernel tap `t`, if inside.
    #[inline]
    fn src(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let i = (o * self.stride + t) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < extent).then_some(i as usize)
    }
}

/// Unfolds `x[c_in,h,w]` into `[c_in*k*k, h_out*w_out]`.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.out_pixels();
    let mut cols = vec![T::zero(); g.patch() * p];
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oh in 0..g.h_out {
                    let Some(ih) = g.src(oh, ki, g.h) else { continue };
                    let src_row = &plane[ih * g.w..(ih + 1) * g.w];
                    let dst_row = &mut dst[oh * g.w_out..(oh + 1) * g.w_out];
                    for (ow, d) in dst_row.iter_mut().enumerate() {
                        if let Some(iw) = g.src(ow, kj, g.w) {
                            *d = src_row[iw];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto `dx`.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.out_pixels();
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oh in 0..g.h_out {
                    let Some(ih) = g.src(oh, ki, g.h) else { continue };
                    let src_row = &src[oh * g.w_out..(oh + 1) * g.w_out];
                    for (ow, &v) in src_row.iter().enumerate() {
                        if let Some(iw) = g.src(ow, kj, g.w) {
                            plane[ih * g.w + iw] = plane[ih * g.w + iw] + v;
                        }
                    }
                }
            }
        }
    }
}

/// Dense convolution. Returns the output and the unfolded input (empty for
/// pointwise convolutions, which read `x` directly).
pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    c_out: usize,
    g: &ConvGeom,
) -> (Vec<T>, Vec<T>) {
    let p = g.out_pixels();
    let k = g.patch();
    let mut out = vec![T::zero(); c_out * p];
    let cols = if g.is_pointwise() { Vec::new() } else { im2col(x, g) };
    let src = if g.is_pointwise() { x } else { &cols[..] };
    matmul(MatRef::new(weight, c_out, k), MatRef::new(src, k, p), &mut out, false);
    if let Some(b) = bias {
        for (row, &bv) in out.chunks_exact_mut(p).zip(b) {
            for v in row {
                *v = *v + bv;
            }
        }
    }
    (out, cols)
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    cols: &[T],
    weight: &[T],
    dy: &[T],
    c_out: usize,
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let p = g.out_pixels();
    let k = g.patch();
    let src = if g.is_pointwise() { x } else { cols };
    let dw = need.1.then(|| {
        let mut dw = vec![T::zero(); c_out * k];
        matmul(MatRef::new(dy, c_out, p), MatRef::new(src, k, p).t(), &mut dw, false);
        dw
    });
    let db = need.2.then(|| dy.chunks_exact(p).map(|r| r.iter().copied().sum()).collect());
    let dx = need.0.then(|| {
        let mut dcols = vec![T::zero(); k * p];
        matmul(MatRef::new(weight, c_out, k).t(), MatRef::new(dy, c_out, p), &mut dcols, false);
        if g.is_pointwise() {
            dcols
        } else {
            let mut dx = vec![T::zero(); g.c_in * g.h * g.w];
            col2im(&dcols, g, &mut dx);
            dx
        }
    });
    ConvGrads { dx, dw, db }
}

/// Per-channel spatial convolution, `weight[c,1,k,k]`.
pub(crate) fn depthwise_forward<T: Scalar>(x: &[T], weight: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let p = g.out_pixels();
    let mut out = vec![T::zero(); g.c_in * p];
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        let ker = &weight[c * g.k * g.k..(c + 1) * g.k * g.k];
        let b = bias.map_or(T::zero(), |b| b[c]);
        let o = &mut out[c * p..(c + 1) * p];
        for oh in 0..g.h_out {
            for ow in 0..g.w_out {
                let mut acc = T::zero();
                for ki in 0..g.k {
                    let Some(ih) = g.src(oh, ki, g.h) else { continue };
                    for kj in 0..g.k {
                        if let Some(iw) = g.src(ow, kj, g.w) {
                            acc = acc + plane[ih * g.w + iw] * ker[ki * g.k + kj];
                        }
                    }
                }
                o[oh * g.w_out + ow] = acc + b;
            }
        }
    }
    out
}

pub(crate) fn depthwise_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let p = g.out_pixels();
    let mut dx = need.0.then(|| vec![T::zero(); x.len()]);
    let mut dw = need.1.then(|| vec![T::zero(); weight.len()]);
    let db = need
        .2
        .then(|| dy.chunks_exact(p).map(|r| r.iter().copied().sum()).collect());
    for c in 0..g.c_in {
        let base = c * g.h * g.w;
        let kb = c * g.k * g.k;
        for oh in 0..g.h_out {
            for ow in 0..g.w_out {
                let d = dy[c * p + oh * g.w_out + ow];
                for ki in 0..g.k {
                    let Some(ih) = g.src(oh, ki, g.h) else { continue };
                    for kj in 0..g.k {
                        if let Some(iw) = g.src(ow, kj, g.w) {
                            let xi = base + ih * g.w + iw;
                            let wi = kb + ki * g.k + kj;
                            if let Some(dx) = dx.as_mut() {
                                dx[xi] = dx[xi] + d * weight[wi];
                            }
                            if let Some(dw) = dw.as_mut() {
                                dw[wi] = dw[wi] + d * x[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}

/// `[c*r*r, h, w] -> [c, h*r, w*r]`; `inverse` performs the unshuffle.
pub(crate) fn pixel_shuffle<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, r: usize, inverse: bool) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let (ho, wo) = (h * r, w * r);
    for co in 0..c {
        for i in 0..r {
            for j in 0..r {
                let ci = co * r * r + i * r + j;
                for hh in 0..h {
                    for ww in 0..w {
                        let packed = (ci * h + hh) * w + ww;
                        let spread = (co * ho + hh * r + i) * wo + ww * r + j;
                        if inverse {
                            out[packed] = x[spread];
                        } else {
                            out[spread] = x[packed];
                        }
                    }
                }
            }
        }
    }
    out
}
