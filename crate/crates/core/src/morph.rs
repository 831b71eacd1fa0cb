//! Synthetic PCA face-shape model, pinhole projection, and rendering of
//! projected vertices as point markers over an HR image.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autograd::keyed_rng;
use crate::data::ImageU8;
use crate::error::{Error, Result};

pub const MARKER: [u8; 3] = [255, 255, 255];

/// Linear shape model `S = mean + sum_i gamma_i * sigma_i * m_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeModel {
    pub mean: Vec<[f64; 3]>,
    /// Orthonormal components, each flattened to `3 * V` values.
    pub components: Vec<Vec<f64>>,
    pub sigmas: Vec<f64>,
}

impl ShapeModel {
    pub fn vertices(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.components.len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Seeded model: mean on a Fibonacci-sampled ellipsoid with zero centroid,
/// components orthonormalized by modified Gram-Schmidt.
pub fn make_synthetic_model(seed: u64, v: usize, k: usize) -> Result<ShapeModel> {
    if v < 4 || k == 0 || k > 3 * v {
        return Err(Error::usage(format!("need V >= 4 and 1 <= K <= 3V, got V={v}, K={k}")));
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut mean: Vec<[f64; 3]> = (0..v)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / v as f64;
            let r = (1.0 - y * y).sqrt();
            let t = golden * i as f64;
            [0.8 * r * t.cos(), y, 0.6 * r * t.sin()]
        })
        .collect();
    let mut centroid = [0.0; 3];
    for p in &mean {
        (0..3).for_each(|d| centroid[d] += p[d] / v as f64);
    }
    for p in &mut mean {
        (0..3).for_each(|d| p[d] -= centroid[d]);
    }

    let mut rng = keyed_rng(seed, "morph.components");
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    while components.len() < k {
        let mut c: Vec<f64> = (0..3 * v).map(|_| rng.sample(StandardNormal)).collect();
        // two passes keep the Gram error at rounding level
        for _ in 0..2 {
            for prev in &components {
                let p = dot(&c, prev);
                c.iter_mut().zip(prev).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = dot(&c, &c).sqrt();
        if n < 1e-8 {
            continue;
        }
        c.iter_mut().for_each(|x| *x /= n);
        components.push(c);
    }
    let sigmas = (0..k).map(|i| 0.08 / (1.0 + i as f64).sqrt()).collect();
    Ok(ShapeModel { mean, components, sigmas })
}

pub fn sample_shape(model: &ShapeModel, gamma: &[f64]) -> Result<Vec<[f64; 3]>> {
    if gamma.len() != model.rank() {
        return Err(Error::usage(format!("expected {} coefficients, got {}", model.rank(), gamma.len())));
    }
    let mut out = model.mean.clone();
    for ((c, s), g) in model.components.iter().zip(&model.sigmas).zip(gamma) {
        let w = g * s;
        for (i, p) in out.iter_mut().enumerate() {
            (0..3).for_each(|d| p[d] += w * c[3 * i + d]);
        }
    }
    Ok(out)
}

/// Standard-normal shape coefficients for image `index`.
pub fn sample_gamma(seed: u64, index: usize, k: usize) -> Vec<f64> {
    let mut rng = keyed_rng(seed, &format!("morph.gamma{index}"));
    (0..k).map(|_| rng.sample(StandardNormal)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major world-to-camera rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl Camera {
    pub fn new(focal: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(focal > 0.0) {
            return Err(Error::usage(format!("focal length {focal} must be positive")));
        }
        Ok(Camera {
            focal,
            cx,
            cy,
            rotation: IDENTITY,
            translation: [0.0; 3],
        })
    }

    /// Frontal view that keeps a unit-radius model inside a `size` image.
    pub fn frontal(size: usize) -> Self {
        let s = size as f64;
        Camera {
            focal: 1.2 * s,
            cx: s / 2.0,
            cy: s / 2.0,
            rotation: IDENTITY,
            translation: [0.0, 0.0, 4.0],
        }
    }

    fn to_camera(&self, p: &[f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [0, 1, 2].map(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i])
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Projection {
    /// `(vertex index, [u, v])` for every vertex in front of the camera.
    pub points: Vec<(usize, [f64; 2])>,
    /// Vertices with camera-frame `z <= 0`.
    pub skipped: Vec<usize>,
}

impl Projection {
    pub fn uv(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(|p| p.1).collect()
    }
}

pub fn project(vertices: &[[f64; 3]], cam: &Camera) -> Projection {
    let mut out = Projection::default();
    for (i, p) in vertices.iter().enumerate() {
        let [x, y, z] = cam.to_camera(p);
        if z <= 0.0 {
            out.skipped.push(i);
            continue;
        }
        out.points.push((i, [cam.focal * x / z + cam.cx, cam.focal * y / z + cam.cy]));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SscTarget {
    pub image: ImageU8,
    /// Distinct in-bounds pixels that received a marker, in first-hit order.
    pub points: Vec<(usize, usize)>,
}

/// Copies `hr` and paints one marker pixel at each rounded in-bounds point.
pub fn render_target(hr: &ImageU8, points: &[[f64; 2]]) -> SscTarget {
    let mut image = hr.clone();
    let mut hit = vec![false; hr.width() * hr.height()];
    let mut kept = Vec::new();
    for [u, v] in points {
        let (x, y) = (u.round(), v.round());
        if !(x >= 0.0 && y >= 0.0 && x < hr.width() as f64 && y < hr.height() as f64) {
            continue;
        }
        let (x, y) = (x as usize, y as usize);
        if !std::mem::replace(&mut hit[y * hr.width() + x], true) {
            image.put(x, y, MARKER);
            kept.push((x, y));
        }
    }
    SscTarget { image, points: kept }
}

/// Full target pipeline for one image.
pub fn make_target(hr: &ImageU8, model: &ShapeModel, gamma: &[f64], cam: &Camera) -> Result<SscTarget> {
    let shape = sample_shape(model, gamma)?;
    Ok(render_target(hr, &project(&shape, cam).uv()))
}
