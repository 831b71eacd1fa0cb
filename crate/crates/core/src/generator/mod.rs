//! The three-branch generator: progressive trunk, DCT autoencoder fused
//! before the image head, and the structural-constraint side branch.

mod config;
mod dctae;

pub use config::GeneratorConfig;
pub use dctae::DctAutoencoder;

use crate::autograd::nn::{lrelu, Conv2d};
use crate::autograd::{Graph, ParamStore, Scalar, Tensor, Var};
use crate::blocks::{CecAm, CecAmConfig, HfeBlock, HfeConfig, HfeModule, Reconstruct, RESIDUAL_GAIN};
use crate::data::{bicubic_resize_tensor, luma_tensor};
use crate::error::{Error, Result};
use crate::freq::{dct_grid_to_image_var, image_to_dct_map, BLOCK};

/// HFE modules followed by channel attention over the first few module
/// outputs.
#[derive(Clone, Debug)]
pub struct HefCa {
    pub modules: Vec<HfeModule>,
    pub cec: Option<CecAm>,
    taps: usize,
}

impl HefCa {
    fn new(store: &mut ParamStore, name: &str, cfg: &GeneratorConfig) -> Result<Self> {
        let hfe = HfeConfig::for_width(cfg.channels);
        let modules = (0..cfg.modules)
            .map(|m| HfeModule::new(store, &format!("{name}.hfem{m}"), hfe, cfg.blocks))
            .collect::<Result<_>>()?;
        let cec = if cfg.enable_cec {
            let c = CecAmConfig {
                in_channels: cfg.cec_in(),
                out_channels: cfg.channels,
                expansion: cfg.cec_expansion,
                reduction: cfg.cec_reduction,
            };
            Some(CecAm::new(store, &format!("{name}.cec"), c)?)
        } else {
            None
        };
        Ok(HefCa {
            modules,
            cec,
            taps: cfg.cec_taps,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.modules.len());
        let mut h = x;
        for m in &self.modules {
            h = m.forward(g, h)?;
            outs.push(h);
        }
        let Some(cec) = &self.cec else {
            return Ok(h);
        };
        let tapped = &outs[..self.taps];
        let cat = if tapped.len() == 1 { tapped[0] } else { g.concat(tapped)? };
        let att = cec.forward(g, cat)?;
        g.add(h, att)
    }
}

/// Shallow feature conv, HEF-CA phase and an optional x2 reconstruction.
#[derive(Clone, Debug)]
pub struct Stage {
    pub ece: Conv2d,
    pub hefca: HefCa,
    pub recon: Option<Reconstruct>,
}

impl Stage {
    fn new(store: &mut ParamStore, name: &str, c_in: usize, cfg: &GeneratorConfig, upsample: bool) -> Result<Self> {
        Ok(Stage {
            ece: Conv2d::new(store, &format!("{name}.ece"), c_in, cfg.channels, 3)?,
            hefca: HefCa::new(store, &format!("{name}.hefca"), cfg)?,
            recon: if upsample {
                Some(Reconstruct::new(store, &format!("{name}.recon"), cfg.channels, cfg.channels, true)?)
            } else {
                None
            },
        })
    }

    /// Returns the HEF-CA output and the stage output.
    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<(Var, Var)> {
        let e = self.ece.forward(g, x)?;
        let e = lrelu(g, e)?;
        let h = self.hefca.forward(g, e)?;
        let out = match &self.recon {
            Some(r) => r.forward(g, h)?,
            None => h,
        };
        Ok((h, out))
    }
}

/// Concatenates the spatial frequency map to the features and mixes back
/// with a 1x1 conv initialized to pass the features through.
#[derive(Clone, Debug)]
pub struct Fusion {
    pub conv: Conv2d,
}

impl Fusion {
    fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let conv = Conv2d::with_options(store, name, channels + 1, channels, 1, 1, RESIDUAL_GAIN)?;
        let w = store.get_mut(conv.weight).data_mut();
        for o in 0..channels {
            for i in 0..channels {
                w[o * (channels + 1) + i] = if o == i { 1.0 } else { 0.0 };
            }
        }
        Ok(Fusion { conv })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, features: Var, freq_map: Var) -> Result<Var> {
        let (c, h, w) = g.value(features).chw()?;
        if g.shape(freq_map) != [1, h, w] {
            return Err(Error::dim(format!(
                "frequency map {:?} does not match features [{c}, {h}, {w}]",
                g.shape(freq_map)
            )));
        }
        let cat = g.concat(&[features, freq_map])?;
        self.conv.forward(g, cat)
    }
}

/// HFE blocks on the shared stage-0 features, x2 reconstructions up to HR,
/// and an image head.
#[derive(Clone, Debug)]
pub struct SscBranch {
    pub blocks: Vec<HfeBlock>,
    pub recons: Vec<Reconstruct>,
    pub head: Conv2d,
}

impl SscBranch {
    fn new(store: &mut ParamStore, name: &str, cfg: &GeneratorConfig) -> Result<Self> {
        let c = cfg.channels;
        Ok(SscBranch {
            blocks: (0..cfg.ssc_blocks)
                .map(|i| HfeBlock::new(store, &format!("{name}.block{i}"), HfeConfig::for_width(c)))
                .collect::<Result<_>>()?,
            recons: (0..cfg.stages())
                .map(|i| Reconstruct::new(store, &format!("{name}.recon{i}"), c, c, true))
                .collect::<Result<_>>()?,
            head: Conv2d::with_options(store, &format!("{name}.head"), c, 3, 3, 1, RESIDUAL_GAIN)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, shared: Var) -> Result<Var> {
        let mut h = shared;
        for b in &self.blocks {
            h = b.forward(g, h)?;
        }
        for r in &self.recons {
            h = r.forward(g, h)?;
        }
        self.head.forward(g, h)
    }
}

/// Graph handles for everything the losses consume.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorOutput {
    /// `[3, H, W]` super-resolved image in `[0, 1]` units, unclamped.
    pub sr: Var,
    /// `[C, H, W]` features entering the image head.
    pub features: Var,
    /// `[64, H/8, W/8]` predicted HR luma DCT grid.
    pub dct: Option<Var>,
    /// `[3, H, W]` structural-constraint image.
    pub ssc: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    pub stages: Vec<Stage>,
    /// Reconstructions after the single phase of the non-progressive layout.
    pub recons: Vec<Reconstruct>,
    pub dctae: Option<DctAutoencoder>,
    pub fusion: Option<Fusion>,
    pub head: Conv2d,
    pub ssc: Option<SscBranch>,
}

/// LR luma DCT grid `[64, h/8, w/8]` of a `[3, h, w]` image in `[0, 1]`.
pub fn lr_dct_grid<T: Scalar>(lr: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(image_to_dct_map(&luma_tensor(lr)?, BLOCK)?.grid)
}

impl Generator {
    /// Creates every parameter in `store`; names are dotted paths such as
    /// `stage1.hefca.hfem0.block2.b5.weight`.
    pub fn new(store: &mut ParamStore, cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let (stages, recons) = if cfg.progressive {
            let stages = (0..cfg.stages())
                .map(|s| Stage::new(store, &format!("stage{s}"), if s == 0 { 3 } else { c }, &cfg, true))
                .collect::<Result<_>>()?;
            (stages, Vec::new())
        } else {
            let stage = Stage::new(store, "stage0", 3, &cfg, false)?;
            let recons = (0..cfg.stages())
                .map(|i| Reconstruct::new(store, &format!("recon{i}"), c, c, true))
                .collect::<Result<_>>()?;
            (vec![stage], recons)
        };
        let (dctae, fusion) = if cfg.enable_dctae {
            (Some(DctAutoencoder::new(store, "dctae", &cfg)?), Some(Fusion::new(store, "fusion", c)?))
        } else {
            (None, None)
        };
        let head = Conv2d::with_options(store, "head", c, 3, 3, 1, RESIDUAL_GAIN)?;
        let ssc = if cfg.enable_ssc {
            Some(SscBranch::new(store, "ssc", &cfg)?)
        } else {
            None
        };
        Ok(Generator {
            cfg,
            stages,
            recons,
            dctae,
            fusion,
            head,
            ssc,
        })
    }

    /// Runs all enabled branches, deriving the LR DCT grid from `lr`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, lr: Var) -> Result<GeneratorOutput> {
        let lr_dct = match self.dctae {
            Some(_) => Some(g.constant(lr_dct_grid(g.value(lr))?)),
            None => None,
        };
        self.forward_with_dct(g, lr, lr_dct)
    }

    pub fn forward_with_dct<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        lr: Var,
        lr_dct: Option<Var>,
    ) -> Result<GeneratorOutput> {
        let n = self.cfg.lr_size;
        if g.shape(lr) != [3, n, n] {
            return Err(Error::dim(format!("generator expects LR [3, {n}, {n}], got {:?}", g.shape(lr))));
        }
        let mut h = lr;
        let mut shared = None;
        for stage in &self.stages {
            let (trunk, out) = stage.forward(g, h)?;
            shared.get_or_insert(trunk);
            h = out;
        }
        for r in &self.recons {
            h = r.forward(g, h)?;
        }
        let mut features = h;
        let skip = if self.cfg.bicubic_skip {
            let hr = self.cfg.hr_size();
            Some(g.constant(bicubic_resize_tensor(g.value(lr), hr, hr)?))
        } else {
            None
        };
        let with_skip = |g: &mut Graph<'_, T>, v: Var| match skip {
            Some(s) => g.add(v, s),
            None => Ok(v),
        };

        let dct = match (&self.dctae, &self.fusion) {
            (Some(ae), Some(fusion)) => {
                let input = lr_dct.ok_or_else(|| Error::usage("autoencoder enabled but no LR DCT grid given"))?;
                let pred = ae.forward(g, input)?;
                let map = dct_grid_to_image_var(g, pred)?;
                features = fusion.forward(g, features, map)?;
                Some(pred)
            }
            _ => None,
        };
        let img = self.head.forward(g, features)?;
        let sr = with_skip(g, img)?;
        let ssc = match &self.ssc {
            Some(branch) => {
                let s = branch.forward(g, shared.expect("at least one stage"))?;
                Some(with_skip(g, s)?)
            }
            None => None,
        };
        Ok(GeneratorOutput { sr, features, dct, ssc })
    }
}
