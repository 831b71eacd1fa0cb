//! On-disk training sets: HR and bicubic LR images, the HR luma DCT grid,
//! the structural-constraint target, and a tab-separated index.

use std::fs;
use std::path::{Path, PathBuf};

use crate::autograd::Tensor;
use crate::data::{bicubic_resize, luma_tensor, synth, ImageU8};
use crate::error::{Error, Result};
use crate::freq::{image_to_dct_map, DctCoefficientMap, BLOCK};
use crate::generator::lr_dct_grid;
use crate::morph::{make_target, make_synthetic_model, sample_gamma, Camera};

pub const INDEX_FILE: &str = "index.tsv";
const INDEX_HEADER: &str = "name\thr\tlr\tdct\tssc\tgamma";

#[derive(Clone, Debug, PartialEq)]
pub struct PrepareOptions {
    pub scale: usize,
    pub hr_size: usize,
    pub seed: u64,
    pub vertices: usize,
    pub components: usize,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            scale: 4,
            hr_size: 64,
            seed: 0,
            vertices: 512,
            components: 8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrepareReport {
    pub written: Vec<String>,
    /// Sources that could not be read, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

/// Image files (`.png`, `.ppm`) directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "ppm")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Writes `count` synthetic faces as `face_NNNN.ppm` into `dir`.
pub fn write_synthetic_sources(dir: &Path, count: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..count)
        .map(|i| {
            let p = dir.join(format!("face_{i:04}.ppm"));
            synth::synthetic_face(seed, i, size).save(&p)?;
            Ok(p)
        })
        .collect()
}

/// Center-crops to a square and resizes to `size` when needed.
fn conform(img: ImageU8, size: usize, path: &Path) -> Result<ImageU8> {
    if img.width() == size && img.height() == size {
        return Ok(img);
    }
    log::warn!(
        "{}: {}x{} source conformed to {size}x{size}",
        path.display(),
        img.width(),
        img.height()
    );
    let side = img.width().min(img.height());
    let (x0, y0) = ((img.width() - side) / 2, (img.height() - side) / 2);
    let mut pixels = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            pixels.extend_from_slice(&img.get(x0 + x, y0 + y));
        }
    }
    bicubic_resize(&ImageU8::new(side, side, pixels)?, size, size)
}

fn gamma_text(g: &[f64]) -> String {
    g.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

pub fn prepare_data(sources: &[PathBuf], out_dir: &Path, opts: &PrepareOptions) -> Result<PrepareReport> {
    if opts.scale == 0 || !opts.hr_size.is_multiple_of(opts.scale) || !opts.hr_size.is_multiple_of(BLOCK) {
        return Err(Error::usage(format!(
            "HR size {} must be divisible by the scale {} and by {BLOCK}",
            opts.hr_size, opts.scale
        )));
    }
    for sub in ["hr", "lr", "dct", "ssc"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let model = make_synthetic_model(opts.seed, opts.vertices, opts.components)?;
    let camera = Camera::frontal(opts.hr_size);
    let lr_size = opts.hr_size / opts.scale;
    let mut report = PrepareReport::default();
    let mut index = format!("{INDEX_HEADER}\n");
    for src in sources {
        let hr = match ImageU8::load(src) {
            Ok(img) => conform(img, opts.hr_size, src)?,
            Err(e) => {
                log::warn!("skipping {}: {e}", src.display());
                report.skipped.push((src.clone(), e.to_string()));
                continue;
            }
        };
        let name = src.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        let n = report.written.len();
        let lr = bicubic_resize(&hr, lr_size, lr_size)?;
        let dct = image_to_dct_map(&luma_tensor(&hr.to_tensor::<f32>())?, BLOCK)?;
        let gamma = sample_gamma(opts.seed, n, opts.components);
        let target = make_target(&hr, &model, &gamma, &camera)?;
        let rel = [
            format!("hr/{name}.ppm"),
            format!("lr/{name}.ppm"),
            format!("dct/{name}"),
            format!("ssc/{name}.ppm"),
        ];
        hr.save(&out_dir.join(&rel[0]))?;
        lr.save(&out_dir.join(&rel[1]))?;
        dct.save(&out_dir.join(format!("{}.txt", rel[2])), &out_dir.join(format!("{}.bin", rel[2])))?;
        target.image.save(&out_dir.join(&rel[3]))?;
        index.push_str(&format!("{name}\t{}\t{}\n", rel.join("\t"), gamma_text(&gamma)));
        report.written.push(name);
    }
    crate::autograd::write_file(&out_dir.join(INDEX_FILE), index.as_bytes())?;
    Ok(report)
}

/// One prepared example, held both as 8-bit images and `[0, 1]` tensors.
#[derive(Clone, Debug)]
pub struct Sample {
    pub name: String,
    pub hr_image: ImageU8,
    pub lr_image: ImageU8,
    pub hr: Tensor,
    pub lr: Tensor,
    pub hr_dct: Tensor,
    pub lr_dct: Tensor,
    pub ssc: Tensor,
    pub gamma: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let index_path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(INDEX_HEADER) {
            return Err(Error::parse(index_path.display().to_string(), "missing or wrong header"));
        }
        let mut samples = Vec::new();
        for (n, line) in lines.enumerate() {
            let ctx = || format!("{} line {}", index_path.display(), n + 2);
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 6 {
                return Err(Error::parse(ctx(), format!("expected 6 columns, got {}", cols.len())));
            }
            let gamma = cols[5]
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|_| Error::parse(ctx(), format!("bad gamma value {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            let hr_image = ImageU8::load(&dir.join(cols[1]))?;
            let lr_image = ImageU8::load(&dir.join(cols[2]))?;
            let dct = DctCoefficientMap::<f32>::load(
                &dir.join(format!("{}.txt", cols[3])),
                &dir.join(format!("{}.bin", cols[3])),
            )?;
            let ssc_image = ImageU8::load(&dir.join(cols[4]))?;
            if hr_image.width() % lr_image.width() != 0 || ssc_image.width() != hr_image.width() {
                return Err(Error::dim(format!("{}: inconsistent image sizes", cols[0])));
            }
            let lr = lr_image.to_tensor();
            samples.push(Sample {
                name: cols[0].to_string(),
                hr: hr_image.to_tensor(),
                lr_dct: lr_dct_grid(&lr)?,
                lr,
                hr_dct: dct.grid,
                ssc: ssc_image.to_tensor(),
                hr_image,
                lr_image,
                gamma,
            });
        }
        if samples.is_empty() {
            return Err(Error::usage(format!("{} lists no images", index_path.display())));
        }
        Ok(Dataset { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Side lengths `(lr, hr)` of the first sample.
    pub fn sizes(&self) -> (usize, usize) {
        let s = &self.samples[0];
        (s.lr_image.width(), s.hr_image.width())
    }
}
