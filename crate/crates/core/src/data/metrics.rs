//! Y-channel quality metrics.

use super::ImageU8;
use crate::autograd::{Scalar, Tensor};
use crate::error::{Error, Result};

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Full-range BT.601 luma in the 0..255 range, unquantized.
pub fn luma(img: &ImageU8) -> Tensor<f64> {
    let p = img.pixels();
    Tensor::from_fn(&[1, img.height(), img.width()], |i| {
        LUMA[0] * f64::from(p[3 * i]) + LUMA[1] * f64::from(p[3 * i + 1]) + LUMA[2] * f64::from(p[3 * i + 2])
    })
}

/// Luma of a planar `[3, H, W]` tensor, in the tensor's own value range.
pub fn luma_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = t.chw()?;
    if c != 3 {
        return Err(Error::dim(format!("luma needs 3 channels, got {c}")));
    }
    let d = t.data();
    let n = h * w;
    Ok(Tensor::from_fn(&[1, h, w], |i| {
        T::of(LUMA[0] * d[i].as_f64() + LUMA[1] * d[n + i].as_f64() + LUMA[2] * d[2 * n + i].as_f64())
    }))
}

fn same_shape(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; `+inf` when the inputs are identical.
pub fn psnr(a: &Tensor<f64>, b: &Tensor<f64>, peak: f64) -> Result<f64> {
    same_shape(a, b)?;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: 255.0,
        }
    }
}

/// Normalized 2-D Gaussian window, row-major.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let mut w: Vec<f64> = (0..size * size).map(|i| g[i / size] * g[i % size]).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Mean SSIM over every fully contained window position of a `[1, H, W]`
/// pair.
pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>, p: &SsimParams) -> Result<f64> {
    same_shape(a, b)?;
    let (c, h, w) = a.chw()?;
    if c != 1 {
        return Err(Error::dim(format!("ssim expects one channel, got {c}")));
    }
    let k = p.window;
    if k.is_multiple_of(2) || k > h.min(w) {
        return Err(Error::dim(format!("window {k} must be odd and fit in {h}x{w}")));
    }
    let win = gaussian_window(k, p.sigma);
    let c1 = (p.k1 * p.peak).powi(2);
    let c2 = (p.k2 * p.peak).powi(2);
    let (x, y) = (a.data(), b.data());
    let mut total = 0.0;
    for oy in 0..=h - k {
        for ox in 0..=w - k {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..k {
                for dx in 0..k {
                    let wt = win[dy * k + dx];
                    let i = (oy + dy) * w + ox + dx;
                    mx += wt * x[i];
                    my += wt * y[i];
                    sxx += wt * x[i] * x[i];
                    syy += wt * y[i] * y[i];
                    sxy += wt * x[i] * y[i];
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / ((h - k + 1) * (w - k + 1)) as f64)
}

/// Y-channel PSNR/SSIM of one image pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
}

impl MetricReport {
    /// Compares on luma after dropping `crop` pixels from every border.
    pub fn compare(a: &ImageU8, b: &ImageU8, crop: usize) -> Result<Self> {
        let (ya, yb) = (crop_plane(&luma(a), crop)?, crop_plane(&luma(b), crop)?);
        Ok(MetricReport {
            psnr_db: psnr(&ya, &yb, 255.0)?,
            ssim: ssim(&ya, &yb, &SsimParams::default())?,
        })
    }
}

fn crop_plane(t: &Tensor<f64>, crop: usize) -> Result<Tensor<f64>> {
    if crop == 0 {
        return Ok(t.clone());
    }
    let (_, h, w) = t.chw()?;
    if 2 * crop >= h.min(w) {
        return Err(Error::usage(format!("crop {crop} leaves nothing of {h}x{w}")));
    }
    let (nh, nw) = (h - 2 * crop, w - 2 * crop);
    Ok(Tensor::from_fn(&[1, nh, nw], |i| t.data()[(i / nw + crop) * w + i % nw + crop]))
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::autograd::keyed_rng;

    fn noise(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = keyed_rng(seed, "metrics");
        Tensor::from_fn(&[1, h, w], |_| rng.random_range(0.0..255.0))
    }

    #[test]
    fn luma_reference_colors() {
        let px = |rgb| luma(&ImageU8::filled(1, 1, rgb)).item();
        assert!((px([255, 255, 255]) - 255.0).abs() < 1e-9);
        assert!((px([255, 0, 0]) - 76.245).abs() < 1e-9);
        for g in [0u8, 1, 77, 254] {
            assert!((px([g, g, g]) - f64::from(g)).abs() < 1e-9);
        }
    }

    #[test]
    fn luma_tensor_matches_image_luma() {
        let img = ImageU8::new(2, 1, vec![10, 20, 30, 200, 100, 0]).unwrap();
        let t = luma_tensor(&img.to_tensor::<f64>()).unwrap().map(|v| v * 255.0);
        assert!(t.max_abs_diff(&luma(&img)) < 1e-9);
    }

    #[test]
    fn psnr_cases() {
        let a = noise(8, 8, 1);
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), f64::INFINITY);
        let b = a.map(|v| v + 1.0);
        let expect = 20.0 * 255f64.log10();
        assert!((psnr(&a, &b, 255.0).unwrap() - expect).abs() < 1e-9);
        assert!((expect - 48.1308).abs() < 1e-3);
        let c = noise(8, 8, 2);
        assert_eq!(psnr(&a, &c, 255.0).unwrap(), psnr(&c, &a, 255.0).unwrap());
        assert!(psnr(&a, &noise(4, 8, 3), 255.0).is_err());
    }

    /// Sliding window with explicit re-centered second moments.
    fn naive_ssim(a: &Tensor<f64>, b: &Tensor<f64>, p: &SsimParams) -> f64 {
        let (_, h, w) = a.chw().unwrap();
        let k = p.window;
        let r = (k / 2) as f64;
        let mut wts = vec![vec![0.0; k]; k];
        let mut tot = 0.0;
        for (i, row) in wts.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let d2 = (i as f64 - r).powi(2) + (j as f64 - r).powi(2);
                *v = (-d2 / (2.0 * p.sigma * p.sigma)).exp();
                tot += *v;
            }
        }
        let at = |t: &Tensor<f64>, y: usize, x: usize| t.data()[y * w + x];
        let (c1, c2) = ((p.k1 * p.peak).powi(2), (p.k2 * p.peak).powi(2));
        let mut acc = 0.0;
        let mut n = 0.0;
        for oy in 0..=h - k {
            for ox in 0..=w - k {
                let mean = |t: &Tensor<f64>| {
                    let mut s = 0.0;
                    for i in 0..k {
                        for j in 0..k {
                            s += wts[i][j] / tot * at(t, oy + i, ox + j);
                        }
                    }
                    s
                };
                let (ma, mb) = (mean(a), mean(b));
                let (mut va, mut vb, mut cv) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wt = wts[i][j] / tot;
                        let (da, db) = (at(a, oy + i, ox + j) - ma, at(b, oy + i, ox + j) - mb);
                        va += wt * da * da;
                        vb += wt * db * db;
                        cv += wt * da * db;
                    }
                }
                acc += (2.0 * ma * mb + c1) * (2.0 * cv + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                n += 1.0;
            }
        }
        acc / n
    }

    #[test]
    fn ssim_identity_is_exactly_one() {
        let a = noise(16, 20, 4);
        assert_eq!(ssim(&a, &a, &SsimParams::default()).unwrap(), 1.0);
    }

    #[test]
    fn ssim_inverted_below_one() {
        let a = noise(16, 16, 5);
        let inv = a.map(|v| 255.0 - v);
        assert!(ssim(&a, &inv, &SsimParams::default()).unwrap() < 1.0);
    }

    #[test]
    fn ssim_matches_naive_reference() {
        let p = SsimParams::default();
        let a = noise(18, 15, 6);
        let b = Tensor::from_fn(&[1, 18, 15], |i| (a.data()[i] * 0.7 + 30.0 + (i % 7) as f64).min(255.0));
        let got = ssim(&a, &b, &p).unwrap();
        assert!((got - naive_ssim(&a, &b, &p)).abs() < 1e-6, "{got}");
        assert_eq!(ssim(&a, &b, &p).unwrap(), ssim(&b, &a, &p).unwrap());
    }

    #[test]
    fn ssim_rejects_bad_window() {
        let a = noise(8, 8, 7);
        let p = SsimParams::default();
        assert!(ssim(&a, &a, &p).is_err());
        assert!(ssim(&a, &a, &SsimParams { window: 4, ..p }).is_err());
    }

    #[test]
    fn report_on_identical_images() {
        let img = ImageU8::new(12, 12, (0..432).map(|i| (i * 7 % 256) as u8).collect()).unwrap();
        let r = MetricReport::compare(&img, &img, 0).unwrap();
        assert_eq!(r.psnr_db, f64::INFINITY);
        assert_eq!(r.ssim, 1.0);
        assert!(MetricReport::compare(&img, &img, 1).is_err());
    }
}
