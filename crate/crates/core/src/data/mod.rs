//! Image IO, bicubic degradation, luma conversion, quality metrics and a
//! synthetic face generator for desk-scale datasets.

mod image;
pub mod metrics;
pub mod resize;
pub mod synth;

pub use self::image::ImageU8;
pub use metrics::{luma, luma_tensor, psnr, ssim, MetricReport, SsimParams};
pub use resize::{bicubic_resize, bicubic_resize_tensor, cubic_kernel};
