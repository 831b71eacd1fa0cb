//! Inference and Y-channel evaluation against HR and bicubic baselines.

use std::fmt::Write as _;

use super::checkpoint::Models;
use super::dataset::{Dataset, Sample};
use crate::autograd::{Graph, ParamStore};
use crate::data::{bicubic_resize, ImageU8, MetricReport};
use crate::error::{Error, Result};

/// Super-resolves one 8-bit LR image, clamping the output to `[0, 255]`.
pub fn infer(models: &Models, g_store: &ParamStore, lr: &ImageU8) -> Result<ImageU8> {
    let cfg = &models.generator.cfg;
    if lr.width() != cfg.lr_size || lr.height() != cfg.lr_size {
        return Err(Error::dim(format!(
            "model expects {0}x{0} input, got {1}x{2}",
            cfg.lr_size,
            lr.width(),
            lr.height()
        )));
    }
    let mut g = Graph::new();
    g.bind(g_store, false);
    let x = g.constant(lr.to_tensor());
    let out = models.generator.forward(&mut g, x)?;
    ImageU8::from_tensor(g.value(out.sr))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub model: MetricReport,
    pub bicubic: MetricReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn fmt(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.6}")
    }
}

impl EvalReport {
    /// Column means as `(psnr, ssim, bicubic_psnr, bicubic_ssim)`.
    pub fn mean(&self) -> (f64, f64, f64, f64) {
        let n = self.rows.len().max(1) as f64;
        let sum = |f: &dyn Fn(&EvalRow) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        (
            sum(&|r| r.model.psnr_db),
            sum(&|r| r.model.ssim),
            sum(&|r| r.bicubic.psnr_db),
            sum(&|r| r.bicubic.ssim),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,psnr,ssim,bicubic_psnr,bicubic_ssim\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.name,
                fmt(r.model.psnr_db),
                fmt(r.model.ssim),
                fmt(r.bicubic.psnr_db),
                fmt(r.bicubic.ssim)
            );
        }
        let (a, b, c, d) = self.mean();
        let _ = writeln!(s, "mean,{},{},{},{}", fmt(a), fmt(b), fmt(c), fmt(d));
        s
    }
}

/// Scores `produce(sample)` and the bicubic upscale of each LR image against
/// its HR image, dropping `crop` border pixels.
pub fn evaluate_with(data: &Dataset, crop: usize, produce: impl Fn(&Sample) -> Result<ImageU8>) -> Result<EvalReport> {
    let rows = data
        .samples
        .iter()
        .map(|s| {
            let (w, h) = (s.hr_image.width(), s.hr_image.height());
            let bicubic = bicubic_resize(&s.lr_image, w, h)?;
            Ok(EvalRow {
                name: s.name.clone(),
                model: MetricReport::compare(&produce(s)?, &s.hr_image, crop)?,
                bicubic: MetricReport::compare(&bicubic, &s.hr_image, crop)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport { rows })
}

pub fn evaluate(models: &Models, g_store: &ParamStore, data: &Dataset, crop: usize) -> Result<EvalReport> {
    evaluate_with(data, crop, |s| infer(models, g_store, &s.lr_image))
}
