//! Blockwise orthonormal 2-D DCT-II / DCT-III and packing of block
//! coefficients into a channel grid `[M*M, H/M, W/M]`.
//!
//! Coefficient `(a, b)` of block `(i, j)` lives at `grid[a*M + b, i, j]`
//! (row-major, no zigzag).

use std::path::Path;

use crate::autograd::{load_tensors, save_tensors, CustomBackward, Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Default block size.
pub const BLOCK: usize = 8;

/// `basis[a*M + x] = s(a) * cos((2x+1) a pi / 2M)` with `s(0) = sqrt(1/M)`
/// and `s(a) = sqrt(2/M)` otherwise, making the matrix orthogonal.
pub fn dct_basis(m: usize) -> Vec<f64> {
    let mut basis = vec![0.0; m * m];
    for a in 0..m {
        let s = if a == 0 {
            (1.0 / m as f64).sqrt()
        } else {
            (2.0 / m as f64).sqrt()
        };
        for x in 0..m {
            let angle = (2 * x + 1) as f64 * a as f64 * std::f64::consts::PI / (2 * m) as f64;
            basis[a * m + x] = s * angle.cos();
        }
    }
    basis
}

struct Basis<T> {
    m: usize,
    c: Vec<T>,
}

impl<T: Scalar> Basis<T> {
    fn new(m: usize) -> Self {
        Basis {
            m,
            c: dct_basis(m).into_iter().map(T::of).collect(),
        }
    }

    /// `C · X · Cᵀ` when `forward`, `Cᵀ · X · C` otherwise; `src`/`dst` are
    /// `M×M` row-major.
    fn apply(&self, src: &[T], dst: &mut [T], forward: bool) {
        let m = self.m;
        let c = |r: usize, k: usize| if forward { self.c[r * m + k] } else { self.c[k * m + r] };
        let mut tmp = vec![T::zero(); m * m];
        for r in 0..m {
            for col in 0..m {
                let mut acc = T::zero();
                for k in 0..m {
                    acc = acc + c(r, k) * src[k * m + col];
                }
                tmp[r * m + col] = acc;
            }
        }
        for r in 0..m {
            for col in 0..m {
                let mut acc = T::zero();
                for k in 0..m {
                    acc = acc + tmp[r * m + k] * c(col, k);
                }
                dst[r * m + col] = acc;
            }
        }
    }
}

fn square_block<T: Scalar>(block: &Tensor<T>) -> Result<usize> {
    match block.shape() {
        [m, n] if m == n && *m >= 1 => Ok(*m),
        s => Err(Error::dim(format!("expected a square MxM block, got {s:?}"))),
    }
}

/// Orthonormal 2-D DCT-II of one `M×M` block.
pub fn dct_block<T: Scalar>(block: &Tensor<T>) -> Result<Tensor<T>> {
    let m = square_block(block)?;
    let mut out = Tensor::zeros(&[m, m]);
    Basis::new(m).apply(block.data(), out.data_mut(), true);
    Ok(out)
}

/// Inverse of [`dct_block`].
pub fn idct_block<T: Scalar>(coeffs: &Tensor<T>) -> Result<Tensor<T>> {
    let m = square_block(coeffs)?;
    let mut out = Tensor::zeros(&[m, m]);
    Basis::new(m).apply(coeffs.data(), out.data_mut(), false);
    Ok(out)
}

/// Blockwise DCT coefficients of a single-channel image.
#[derive(Clone, Debug, PartialEq)]
pub struct DctCoefficientMap<T = f32> {
    pub block: usize,
    /// `[M*M, H/M, W/M]`
    pub grid: Tensor<T>,
    pub source_dims: (usize, usize),
}

impl<T: Scalar> DctCoefficientMap<T> {
    /// Wraps a packed grid, inferring `M` from its channel count.
    pub fn from_grid(grid: Tensor<T>) -> Result<Self> {
        let (c, h, w) = grid.chw()?;
        let m = (c as f64).sqrt().round() as usize;
        if m == 0 || m * m != c {
            return Err(Error::dim(format!("grid channel count {c} is not a square")));
        }
        Ok(DctCoefficientMap {
            block: m,
            grid,
            source_dims: (h * m, w * m),
        })
    }

    /// Grid extents `(blocks_y, blocks_x)`.
    pub fn blocks(&self) -> (usize, usize) {
        (self.source_dims.0 / self.block, self.source_dims.1 / self.block)
    }

    /// Writes the grid as a manifest plus flat little-endian `f32` blob.
    pub fn save(&self, manifest: &Path, blob: &Path) -> Result<()> {
        save_tensors(manifest, blob, [("dct", &self.grid)])
    }

    pub fn load(manifest: &Path, blob: &Path) -> Result<Self> {
        let mut items = load_tensors::<T>(manifest, blob)?;
        if items.len() != 1 || items[0].0 != "dct" {
            return Err(Error::parse(manifest.display().to_string(), "expected a single `dct` tensor"));
        }
        Self::from_grid(items.remove(0).1)
    }
}

fn packed_transform<T: Scalar>(src: &[T], h: usize, w: usize, m: usize, to_grid: bool) -> Vec<T> {
    let basis = Basis::new(m);
    let (bh, bw) = (h / m, w / m);
    let mut out = vec![T::zero(); h * w];
    let mut block = vec![T::zero(); m * m];
    let mut coeffs = vec![T::zero(); m * m];
    for i in 0..bh {
        for j in 0..bw {
            if to_grid {
                for y in 0..m {
                    for x in 0..m {
                        block[y * m + x] = src[(i * m + y) * w + j * m + x];
                    }
                }
                basis.apply(&block, &mut coeffs, true);
                for (k, v) in coeffs.iter().enumerate() {
                    out[(k * bh + i) * bw + j] = *v;
                }
            } else {
                for (k, v) in coeffs.iter_mut().enumerate() {
                    *v = src[(k * bh + i) * bw + j];
                }
                basis.apply(&coeffs, &mut block, false);
                for y in 0..m {
                    for x in 0..m {
                        out[(i * m + y) * w + j * m + x] = block[y * m + x];
                    }
                }
            }
        }
    }
    out
}

fn check_image_dims(shape: &[usize], m: usize) -> Result<(usize, usize)> {
    match shape {
        [1, h, w] if m >= 1 && h % m == 0 && w % m == 0 => Ok((*h, *w)),
        [1, h, w] => Err(Error::dim(format!("{h}x{w} image is not a multiple of block size {m}"))),
        s => Err(Error::dim(format!("expected a [1,H,W] image, got {s:?}"))),
    }
}

/// Blockwise DCT of a `[1,H,W]` image packed as a channel grid.
pub fn image_to_dct_map<T: Scalar>(image: &Tensor<T>, m: usize) -> Result<DctCoefficientMap<T>> {
    let (h, w) = check_image_dims(image.shape(), m)?;
    let data = packed_transform(image.data(), h, w, m, true);
    Ok(DctCoefficientMap {
        block: m,
        grid: Tensor::new(&[m * m, h / m, w / m], data)?,
        source_dims: (h, w),
    })
}

/// Inverse of [`image_to_dct_map`].
pub fn dct_map_to_image<T: Scalar>(map: &DctCoefficientMap<T>) -> Result<Tensor<T>> {
    let m = map.block;
    let (h, w) = map.source_dims;
    if map.grid.shape() != [m * m, h / m, w / m] || h % m != 0 || w % m != 0 {
        return Err(Error::dim(format!(
            "grid {:?} inconsistent with block {m} and source {h}x{w}",
            map.grid.shape()
        )));
    }
    let data = packed_transform(map.grid.data(), h, w, m, false);
    Tensor::new(&[1, h, w], data)
}

struct GridToImage {
    block: usize,
}

struct ImageToGrid;

// Both transforms are orthogonal, so each one's adjoint is the other.
impl<T: Scalar> CustomBackward<T> for GridToImage {
    fn backward(&self, _inputs: &[&Tensor<T>], grad_out: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let g = image_to_dct_map(grad_out, self.block).expect("shape fixed by forward");
        vec![Some(g.grid)]
    }
}

impl<T: Scalar> CustomBackward<T> for ImageToGrid {
    fn backward(&self, _inputs: &[&Tensor<T>], grad_out: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let map = DctCoefficientMap::from_grid(grad_out.clone()).expect("shape fixed by forward");
        vec![Some(dct_map_to_image(&map).expect("shape fixed by forward"))]
    }
}

/// Differentiable [`dct_map_to_image`] on a `[M*M, h, w]` grid variable.
pub fn dct_grid_to_image_var<T: Scalar>(g: &mut Graph<'_, T>, grid: Var) -> Result<Var> {
    let map = DctCoefficientMap::from_grid(g.value(grid).clone())?;
    let block = map.block;
    let image = dct_map_to_image(&map)?;
    g.custom(&[grid], image, Box::new(GridToImage { block }))
}

/// Differentiable [`image_to_dct_map`] on a `[1, H, W]` image variable.
pub fn image_to_dct_grid_var<T: Scalar>(g: &mut Graph<'_, T>, image: Var, m: usize) -> Result<Var> {
    let map = image_to_dct_map(g.value(image), m)?;
    g.custom(&[image], map.grid, Box::new(ImageToGrid))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;
    use crate::autograd::check::{check_inputs, worst, FdOptions};
    use crate::autograd::keyed_rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = keyed_rng(seed, "freq");
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct evaluation of the cosine double sum, independent of the
    /// matrix factorization used by the implementation.
    fn naive_dct(x: &Tensor<f64>) -> Tensor<f64> {
        let m = x.shape()[0];
        let s = |a: usize| if a == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
        let pi = std::f64::consts::PI;
        Tensor::from_fn(&[m, m], |i| {
            let (a, b) = (i / m, i % m);
            let mut acc = 0.0;
            for u in 0..m {
                for v in 0..m {
                    acc += x.data()[u * m + v]
                        * ((2 * u + 1) as f64 * a as f64 * pi / (2 * m) as f64).cos()
                        * ((2 * v + 1) as f64 * b as f64 * pi / (2 * m) as f64).cos();
                }
            }
            s(a) * s(b) * acc
        })
    }

    #[test]
    fn constant_2x2_block_has_only_dc() {
        let d = dct_block(&Tensor::full(&[2, 2], 1.0f64)).unwrap();
        assert!((d.data()[0] - 2.0).abs() < 1e-12);
        assert!(d.data()[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn identity_2x2_block() {
        let x = Tensor::new(&[2, 2], vec![1.0f64, 0.0, 0.0, 1.0]).unwrap();
        let d = dct_block(&x).unwrap();
        assert!(d.max_abs_diff(&x) < 1e-12, "{d:?}");
    }

    #[test]
    fn matches_direct_double_sum() {
        for m in [1, 2, 3, 8] {
            let x = rand_tensor(&[m, m], m as u64);
            assert!(dct_block(&x).unwrap().max_abs_diff(&naive_dct(&x)) < 1e-12);
        }
    }

    #[test]
    fn dct_is_linear() {
        let (x, y) = (rand_tensor(&[8, 8], 1), rand_tensor(&[8, 8], 2));
        let (a, b) = (0.3, -2.0);
        let combo = Tensor::from_fn(&[8, 8], |i| a * x.data()[i] + b * y.data()[i]);
        let (dx, dy) = (dct_block(&x).unwrap(), dct_block(&y).unwrap());
        let want = Tensor::from_fn(&[8, 8], |i| a * dx.data()[i] + b * dy.data()[i]);
        assert!(dct_block(&combo).unwrap().max_abs_diff(&want) < 1e-6);
    }

    #[test]
    fn idct_cases() {
        let x = rand_tensor(&[8, 8], 3);
        assert!(idct_block(&dct_block(&x).unwrap()).unwrap().max_abs_diff(&x) < 1e-6);
        let mut dc = Tensor::zeros(&[8, 8]);
        dc.data_mut()[0] = 8.0 * 0.75;
        assert!(idct_block(&dc).unwrap().max_abs_diff(&Tensor::full(&[8, 8], 0.75)) < 1e-12);
        assert!(idct_block(&Tensor::<f64>::zeros(&[8, 8])).unwrap().data().iter().all(|v| *v == 0.0));
        assert!(dct_block(&Tensor::<f64>::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn map_shapes_and_errors() {
        let img = Tensor::<f32>::zeros(&[1, 32, 32]);
        assert_eq!(image_to_dct_map(&img, 8).unwrap().grid.shape(), &[64, 4, 4]);
        let img = Tensor::<f32>::zeros(&[1, 128, 128]);
        assert_eq!(image_to_dct_map(&img, 8).unwrap().grid.shape(), &[64, 16, 16]);
        assert!(matches!(
            image_to_dct_map(&Tensor::<f32>::zeros(&[1, 30, 32]), 8),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn packing_is_block_row_major() {
        let img = rand_tensor(&[1, 16, 24], 4);
        let map = image_to_dct_map(&img, 8).unwrap();
        let (i, j) = (1, 2);
        let block = Tensor::from_fn(&[8, 8], |k| img.data()[(i * 8 + k / 8) * 24 + j * 8 + k % 8]);
        let want = naive_dct(&block);
        for a in 0..8 {
            for b in 0..8 {
                let got = map.grid.data()[((a * 8 + b) * 2 + i) * 3 + j];
                assert!((got - want.data()[a * 8 + b]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn map_inverse_cases() {
        let zero = DctCoefficientMap::from_grid(Tensor::<f64>::zeros(&[64, 2, 2])).unwrap();
        assert!(dct_map_to_image(&zero).unwrap().data().iter().all(|v| *v == 0.0));
        let dc = DctCoefficientMap::from_grid(Tensor::<f64>::from_fn(&[64, 2, 2], |i| if i < 4 { 8.0 } else { 0.0 })).unwrap();
        let img = dct_map_to_image(&dc).unwrap();
        assert_eq!(img.shape(), &[1, 16, 16]);
        assert!(img.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn constant_image_lives_in_channel_zero() {
        let map = image_to_dct_map(&Tensor::full(&[1, 16, 16], 0.4f64), 8).unwrap();
        let (bh, bw) = map.blocks();
        let plane = bh * bw;
        assert!(map.grid.data()[..plane].iter().all(|v| (v - 3.2).abs() < 1e-12));
        assert!(map.grid.data()[plane..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn grid_to_image_gradient_matches_fd() {
        let grid = rand_tensor(&[64, 2, 2], 5);
        let weights = rand_tensor(&[1, 16, 16], 6);
        let r = check_inputs("idct", &[grid], |g, v| {
            let img = dct_grid_to_image_var(g, v[0])?;
            let w = g.constant(weights.clone());
            let p = g.mul(img, w)?;
            let p = g.mul(p, p)?;
            g.sum(p)
        }, &FdOptions { samples: 64, ..Default::default() })
        .unwrap();
        assert!(worst(&r) < 1e-3, "{r:?}");
        let img = rand_tensor(&[1, 8, 16], 7);
        let r = check_inputs("dct", &[img], |g, v| {
            let grid = image_to_dct_grid_var(g, v[0], 8)?;
            let p = g.mul(grid, grid)?;
            let p = g.mul(p, grid)?;
            g.sum(p)
        }, &FdOptions::default())
        .unwrap();
        assert!(worst(&r) < 1e-3, "{r:?}");
    }

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let map = image_to_dct_map(&rand_tensor(&[1, 16, 8], 8).cast::<f32>(), 8).unwrap();
        let (m, b) = (dir.path().join("d.txt"), dir.path().join("d.bin"));
        map.save(&m, &b).unwrap();
        assert_eq!(DctCoefficientMap::<f32>::load(&m, &b).unwrap(), map);
    }

    proptest! {
        #[test]
        fn round_trip_and_parseval(seed in 0u64..10_000) {
            let x = rand_tensor(&[8, 8], seed);
            let d = dct_block(&x).unwrap();
            prop_assert!(idct_block(&d).unwrap().max_abs_diff(&x) < 1e-6);
            let ex: f64 = x.data().iter().map(|v| v * v).sum();
            let ed: f64 = d.data().iter().map(|v| v * v).sum();
            prop_assert!(((ex - ed) / ex).abs() < 1e-6);
        }

        #[test]
        fn packing_is_a_bijection(seed in 0u64..10_000, bh in 1usize..4, bw in 1usize..4) {
            let img = rand_tensor(&[1, 8 * bh, 8 * bw], seed);
            let map = image_to_dct_map(&img, 8).unwrap();
            prop_assert!(dct_map_to_image(&map).unwrap().max_abs_diff(&img) < 1e-6);
            let back = image_to_dct_map(&dct_map_to_image(&map).unwrap(), 8).unwrap();
            prop_assert!(back.grid.max_abs_diff(&map.grid) < 1e-6);
        }
    }
}
