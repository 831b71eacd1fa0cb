//! Separable cubic-convolution resampling (`a = -0.5`), antialiased on
//! downscale, with clamped borders.

use super::ImageU8;
use crate::autograd::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const CUBIC_A: f64 = -0.5;

pub fn cubic_kernel(t: f64) -> f64 {
    let a = CUBIC_A;
    let x = t.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Taps and normalized weights for every output sample along one axis.
#[derive(Clone, Debug)]
pub struct AxisWeights {
    pub taps: Vec<Vec<(usize, f64)>>,
}

impl AxisWeights {
    pub fn new(n_in: usize, n_out: usize) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::usage(format!("cannot resample {n_in} samples to {n_out}")));
        }
        let scale = n_out as f64 / n_in as f64;
        let (stretch, support) = if scale < 1.0 { (scale, 2.0 / scale) } else { (1.0, 2.0) };
        let taps = (0..n_out)
            .map(|i| {
                let center = (i as f64 + 0.5) / scale - 0.5;
                let lo = (center - support).floor() as isize;
                let hi = (center + support).ceil() as isize;
                let mut row: Vec<(usize, f64)> = Vec::new();
                for j in lo..=hi {
                    let w = stretch * cubic_kernel(stretch * (center - j as f64));
                    if w == 0.0 {
                        continue;
                    }
                    let src = j.clamp(0, n_in as isize - 1) as usize;
                    match row.iter_mut().find(|(s, _)| *s == src) {
                        Some(e) => e.1 += w,
                        None => row.push((src, w)),
                    }
                }
                let total: f64 = row.iter().map(|(_, w)| w).sum();
                row.iter_mut().for_each(|e| e.1 /= total);
                row
            })
            .collect();
        Ok(AxisWeights { taps })
    }
}

/// Resamples one `h x w` plane to `out_h x out_w`, rows first.
pub fn resize_plane(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Result<Vec<f64>> {
    if src.len() != h * w {
        return Err(Error::dim(format!("plane of {} values is not {h}x{w}", src.len())));
    }
    let wx = AxisWeights::new(w, out_w)?;
    let wy = AxisWeights::new(h, out_h)?;
    let mut tmp = vec![0.0; h * out_w];
    for y in 0..h {
        for (x, taps) in wx.taps.iter().enumerate() {
            tmp[y * out_w + x] = taps.iter().map(|&(s, k)| src[y * w + s] * k).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (y, taps) in wy.taps.iter().enumerate() {
        for x in 0..out_w {
            out[y * out_w + x] = taps.iter().map(|&(s, k)| tmp[s * out_w + x] * k).sum();
        }
    }
    Ok(out)
}

/// Bicubic resize to explicit output dimensions, quantized back to 8 bits.
pub fn bicubic_resize(img: &ImageU8, out_w: usize, out_h: usize) -> Result<ImageU8> {
    let (w, h) = (img.width(), img.height());
    let planes = (0..3)
        .map(|c| resize_plane(&img.plane(c), h, w, out_h, out_w))
        .collect::<Result<Vec<_>>>()?;
    ImageU8::from_planes(out_w, out_h, [&planes[0], &planes[1], &planes[2]])
}

/// Real-valued bicubic resize of a `[C, H, W]` tensor; no clamping.
pub fn bicubic_resize_tensor<T: Scalar>(t: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = t.chw()?;
    let mut data = Vec::with_capacity(c * out_h * out_w);
    for plane in t.data().chunks(h * w) {
        let src: Vec<f64> = plane.iter().map(|v| v.as_f64()).collect();
        data.extend(resize_plane(&src, h, w, out_h, out_w)?.into_iter().map(T::of));
    }
    Tensor::new(&[c, out_h, out_w], data)
}
