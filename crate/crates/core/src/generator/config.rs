use crate::error::{Error, Result};
use crate::freq::BLOCK;

/// Architecture of the three-branch generator.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// Total upscaling factor, 4 or 8; one x2 stage per octave.
    pub scale: usize,
    /// Side of the square LR input.
    pub lr_size: usize,
    pub channels: usize,
    /// HFE modules per HEF-CA phase.
    pub modules: usize,
    /// HFE blocks per module.
    pub blocks: usize,
    /// Number of leading module outputs concatenated into the attention
    /// module.
    pub cec_taps: usize,
    pub cec_expansion: usize,
    pub cec_reduction: usize,
    /// Base width of the DCT autoencoder (bottleneck is twice this).
    pub ae_width: usize,
    pub ssc_blocks: usize,
    /// One HEF-CA per x2 stage; otherwise a single phase at LR followed by
    /// chained reconstructions.
    pub progressive: bool,
    pub enable_cec: bool,
    pub enable_dctae: bool,
    pub enable_ssc: bool,
    /// Add a bicubic upsampling of the input to the image outputs.
    pub bicubic_skip: bool,
}

impl GeneratorConfig {
    pub fn full(scale: usize) -> Self {
        GeneratorConfig {
            scale,
            lr_size: 128 / scale,
            channels: 64,
            modules: 5,
            blocks: 5,
            cec_taps: 4,
            cec_expansion: 3,
            cec_reduction: 24,
            ae_width: 64,
            ssc_blocks: 5,
            progressive: true,
            enable_cec: true,
            enable_dctae: true,
            enable_ssc: true,
            bicubic_skip: true,
        }
    }

    /// Halved widths, two modules per phase, 16x16 -> 64x64.
    pub fn toy() -> Self {
        GeneratorConfig {
            lr_size: 16,
            channels: 32,
            modules: 2,
            blocks: 2,
            cec_taps: 2,
            ae_width: 32,
            ssc_blocks: 2,
            ..Self::full(4)
        }
    }

    /// Smallest configuration exercising every branch, for 64-bit checks.
    pub fn tiny() -> Self {
        GeneratorConfig {
            lr_size: 8,
            channels: 4,
            modules: 1,
            blocks: 2,
            cec_taps: 1,
            cec_expansion: 2,
            cec_reduction: 4,
            ae_width: 4,
            ssc_blocks: 1,
            ..Self::full(4)
        }
    }

    /// Component switches for the ablation columns `a` through `f`.
    pub fn with_ablation(mut self, column: char) -> Result<Self> {
        let (progressive, cec, dctae, ssc) = match column {
            'a' => (false, false, false, false),
            'b' => (true, false, false, false),
            'c' => (true, true, false, false),
            'd' => (true, true, true, false),
            'e' => (true, true, false, true),
            'f' => (true, true, true, true),
            other => return Err(Error::usage(format!("unknown ablation column {other:?}"))),
        };
        self.progressive = progressive;
        self.enable_cec = cec;
        self.enable_dctae = dctae;
        self.enable_ssc = ssc;
        Ok(self)
    }

    pub fn stages(&self) -> usize {
        self.scale.trailing_zeros() as usize
    }

    pub fn hr_size(&self) -> usize {
        self.lr_size * self.scale
    }

    pub fn lr_grid(&self) -> usize {
        self.lr_size / BLOCK
    }

    pub fn hr_grid(&self) -> usize {
        self.hr_size() / BLOCK
    }

    /// Stride-2 stages in the autoencoder encoder, capped by the LR grid.
    pub fn ae_downs(&self) -> usize {
        (self.lr_grid().trailing_zeros() as usize).min(2)
    }

    pub fn cec_in(&self) -> usize {
        self.channels * self.cec_taps
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale != 4 && self.scale != 8 {
            return Err(Error::usage(format!("scale must be 4 or 8, got {}", self.scale)));
        }
        if self.lr_size == 0 || !self.lr_size.is_multiple_of(BLOCK) {
            return Err(Error::dim(format!("LR size {} is not a multiple of {BLOCK}", self.lr_size)));
        }
        if self.lr_grid() & (self.lr_grid() - 1) != 0 {
            return Err(Error::dim(format!("LR grid {} is not a power of two", self.lr_grid())));
        }
        if self.channels == 0 || self.modules == 0 || self.blocks == 0 || self.ae_width == 0 || self.ssc_blocks == 0 {
            return Err(Error::usage("widths and depths must be positive"));
        }
        if self.cec_taps == 0 || self.cec_taps > self.modules {
            return Err(Error::usage(format!(
                "cec_taps {} must lie in 1..={}",
                self.cec_taps, self.modules
            )));
        }
        if self.cec_expansion == 0 || self.cec_reduction == 0 {
            return Err(Error::usage("expansion and reduction must be at least 1"));
        }
        Ok(())
    }
}
