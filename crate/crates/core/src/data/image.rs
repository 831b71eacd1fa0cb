use std::path::Path;

use crate::autograd::{Scalar, Tensor};
use crate::error::{Error, Result};

/// 8-bit RGB image, row-major, interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageU8 {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

fn quantize(v: f64) -> u8 {
    // f64::round rounds half away from zero
    v.clamp(0.0, 255.0).round() as u8
}

impl ImageU8 {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width * height * 3 != pixels.len() {
            return Err(Error::dim(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(ImageU8 { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        ImageU8 { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Planar `[3, H, W]` tensor scaled to `[0, 1]`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let (w, h) = (self.width, self.height);
        Tensor::from_fn(&[3, h, w], |i| {
            let (c, p) = (i / (h * w), i % (h * w));
            T::of(f64::from(self.pixels[3 * p + c]) / 255.0)
        })
    }

    /// Inverse of [`ImageU8::to_tensor`], clamping to `[0, 255]`.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = t.chw()?;
        if c != 3 {
            return Err(Error::dim(format!("expected 3 channels, got {c}")));
        }
        let d = t.data();
        let pixels = (0..h * w * 3)
            .map(|i| {
                let (p, c) = (i / 3, i % 3);
                quantize(d[c * h * w + p].as_f64() * 255.0)
            })
            .collect();
        Ok(ImageU8 { width: w, height: h, pixels })
    }

    /// Builds an image from real-valued planes in the 0..255 range.
    pub fn from_planes(width: usize, height: usize, planes: [&[f64]; 3]) -> Result<Self> {
        if planes.iter().any(|p| p.len() != width * height) {
            return Err(Error::dim("plane sizes do not match image dimensions"));
        }
        let pixels = (0..width * height * 3).map(|i| quantize(planes[i % 3][i / 3])).collect();
        Ok(ImageU8 { width, height, pixels })
    }

    /// Channel `c` as `f64` values in the 0..255 range.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.pixels.iter().skip(c).step_by(3).map(|&v| f64::from(v)).collect()
    }

    /// Reads PNG or PPM (format chosen from the file contents).
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        ImageU8::new(w as usize, h as usize, img.into_raw())
    }

    /// Writes PNG or binary PPM depending on the extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        if ext == "ppm" {
            let mut bytes = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
            bytes.extend_from_slice(&self.pixels);
            return crate::autograd::write_file(path, &bytes);
        }
        image::save_buffer_with_format(
            path,
            &self.pixels,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::from_extension(&ext).unwrap_or(image::ImageFormat::Png),
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ImageU8 {
        ImageU8::new(3, 2, (0..18).map(|v| (v * 14) as u8).collect()).unwrap()
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(matches!(ImageU8::new(2, 2, vec![0; 11]), Err(Error::Dimension(_))));
    }

    #[test]
    fn tensor_round_trip_is_exact() {
        let img = sample();
        let t: Tensor<f32> = img.to_tensor();
        assert_eq!(t.shape(), &[3, 2, 3]);
        assert_eq!(ImageU8::from_tensor(&t).unwrap(), img);
    }

    #[test]
    fn from_tensor_clamps_and_rounds() {
        let t = Tensor::new(&[3, 1, 2], vec![-0.5f64, 2.0, 0.5 / 255.0, 1.5 / 255.0, 0.0, 1.0]).unwrap();
        let img = ImageU8::from_tensor(&t).unwrap();
        assert_eq!(img.pixels(), &[0, 1, 0, 255, 2, 255]);
    }

    #[test]
    fn ppm_and_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = sample();
        for name in ["a.ppm", "a.png"] {
            let p = dir.path().join(name);
            img.save(&p).unwrap();
            assert_eq!(ImageU8::load(&p).unwrap(), img);
        }
        let raw = std::fs::read(dir.path().join("a.ppm")).unwrap();
        assert!(raw.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(raw.len(), 11 + 18);
    }

    #[test]
    fn load_reports_missing_and_garbage_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(ImageU8::load(&dir.path().join("none.png")), Err(Error::Io { .. })));
        let bad = dir.path().join("bad.png");
        std::fs::write(&bad, b"not an image").unwrap();
        assert!(ImageU8::load(&bad).is_err());
    }
}
