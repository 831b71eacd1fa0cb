//! Building blocks of the progressive trunk: the inception-style
//! hierarchical feature extraction block and module, the channel attention
//! module, and the x2 sub-pixel reconstruction stage.

use crate::autograd::nn::{lrelu, Conv2d, DepthwiseConv2d, SqueezeExcite};
use crate::autograd::{Graph, ParamStore, Scalar, Var};
use crate::error::{Error, Result};

/// Gain applied to the He init of residual-branch output projections.
pub const RESIDUAL_GAIN: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HfeConfig {
    pub channels: usize,
    /// Output width of each of the three branches.
    pub branch_width: usize,
    /// Width of the 1x1 reduction in front of the 3x3 and 5x5 kernels.
    pub bottleneck: usize,
}

impl HfeConfig {
    /// Three equal branches of width `channels`, bottleneck `channels / 2`.
    pub fn for_width(channels: usize) -> Self {
        HfeConfig {
            channels,
            branch_width: channels,
            bottleneck: (channels / 2).max(1),
        }
    }

    pub fn concat_width(&self) -> usize {
        3 * self.branch_width
    }
}

fn check_channels<T: Scalar>(g: &Graph<'_, T>, x: Var, want: usize, what: &str) -> Result<()> {
    let (c, _, _) = g.value(x).chw()?;
    if c != want {
        return Err(Error::dim(format!("{what}: expected {want} input channels, got {c}")));
    }
    Ok(())
}

/// Parallel 1x1, 1x1->3x3 and 1x1->5x5 branches, concatenated, projected
/// back to the input width and added to the input.
#[derive(Clone, Debug)]
pub struct HfeBlock {
    pub cfg: HfeConfig,
    b1: Conv2d,
    b3_reduce: Conv2d,
    b3: Conv2d,
    b5_reduce: Conv2d,
    b5: Conv2d,
    pub proj: Conv2d,
}

impl HfeBlock {
    pub fn new(store: &mut ParamStore, name: &str, cfg: HfeConfig) -> Result<Self> {
        let HfeConfig {
            channels: c,
            branch_width: w,
            bottleneck: b,
        } = cfg;
        Ok(HfeBlock {
            cfg,
            b1: Conv2d::new(store, &format!("{name}.b1"), c, w, 1)?,
            b3_reduce: Conv2d::new(store, &format!("{name}.b3r"), c, b, 1)?,
            b3: Conv2d::new(store, &format!("{name}.b3"), b, w, 3)?,
            b5_reduce: Conv2d::new(store, &format!("{name}.b5r"), c, b, 1)?,
            b5: Conv2d::new(store, &format!("{name}.b5"), b, w, 5)?,
            proj: Conv2d::with_options(store, &format!("{name}.proj"), 3 * w, c, 1, 1, RESIDUAL_GAIN)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        check_channels(g, x, self.cfg.channels, "hfe block")?;
        let conv_act = |g: &mut Graph<'_, T>, conv: &Conv2d, v: Var| -> Result<Var> {
            let y = conv.forward(g, v)?;
            lrelu(g, y)
        };
        let p1 = conv_act(g, &self.b1, x)?;
        let r3 = conv_act(g, &self.b3_reduce, x)?;
        let p3 = conv_act(g, &self.b3, r3)?;
        let r5 = conv_act(g, &self.b5_reduce, x)?;
        let p5 = conv_act(g, &self.b5, r5)?;
        let cat = g.concat(&[p1, p3, p5])?;
        let y = self.proj.forward(g, cat)?;
        g.add(x, y)
    }

    pub fn num_params(&self) -> usize {
        [&self.b1, &self.b3_reduce, &self.b3, &self.b5_reduce, &self.b5, &self.proj]
            .iter()
            .map(|c| c.num_params())
            .sum()
    }

    /// Parameters of the bottlenecked 5x5 path (reduction + spatial conv).
    pub fn five_path_params(&self) -> usize {
        self.b5_reduce.num_params() + self.b5.num_params()
    }
}

/// Chain of HFE blocks with a long skip from module input to output.
#[derive(Clone, Debug)]
pub struct HfeModule {
    pub blocks: Vec<HfeBlock>,
}

impl HfeModule {
    pub fn new(store: &mut ParamStore, name: &str, cfg: HfeConfig, n_blocks: usize) -> Result<Self> {
        if n_blocks == 0 {
            return Err(Error::usage("an HFE module needs at least one block"));
        }
        let blocks = (0..n_blocks)
            .map(|i| HfeBlock::new(store, &format!("{name}.block{i}"), cfg))
            .collect::<Result<_>>()?;
        Ok(HfeModule { blocks })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(g, h)?;
        }
        // averaged long skip
        let sum = g.add(x, h)?;
        g.scale(sum, T::of(0.5))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CecAmConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub expansion: usize,
    pub reduction: usize,
}

impl CecAmConfig {
    pub fn expanded(&self) -> usize {
        self.in_channels * self.expansion
    }
}

/// Pointwise expansion, depthwise 3x3, squeeze-excitation, pointwise
/// projection.
#[derive(Clone, Debug)]
pub struct CecAm {
    pub cfg: CecAmConfig,
    expand: Conv2d,
    depthwise: DepthwiseConv2d,
    pub se: SqueezeExcite,
    project: Conv2d,
}

impl CecAm {
    pub fn new(store: &mut ParamStore, name: &str, cfg: CecAmConfig) -> Result<Self> {
        if cfg.expansion == 0 || cfg.reduction == 0 {
            return Err(Error::usage("expansion and reduction must be at least 1"));
        }
        let e = cfg.expanded();
        Ok(CecAm {
            cfg,
            expand: Conv2d::new(store, &format!("{name}.expand"), cfg.in_channels, e, 1)?,
            depthwise: DepthwiseConv2d::new(store, &format!("{name}.dw"), e, 3)?,
            se: SqueezeExcite::new(store, &format!("{name}.se"), e, cfg.reduction)?,
            project: Conv2d::new(store, &format!("{name}.project"), e, cfg.out_channels, 1)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        Ok(self.forward_with_gate(g, x)?.0)
    }

    /// Output together with the excitation gate values.
    pub fn forward_with_gate<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<(Var, Var)> {
        check_channels(g, x, self.cfg.in_channels, "channel attention")?;
        let e = self.expand.forward(g, x)?;
        let e = lrelu(g, e)?;
        let d = self.depthwise.forward(g, e)?;
        let d = lrelu(g, d)?;
        let gate = self.se.gate(g, d)?;
        let s = g.channel_scale(d, gate)?;
        Ok((self.project.forward(g, s)?, gate))
    }

    pub fn num_params(&self) -> usize {
        self.expand.num_params() + self.depthwise.num_params() + self.se.num_params() + self.project.num_params()
    }
}

/// 3x3 conv to `4 * c_out` channels followed by a x2 pixel shuffle.
#[derive(Clone, Debug)]
pub struct Reconstruct {
    conv: Conv2d,
    pub c_out: usize,
    /// LeakyReLU after the shuffle (feature stages); raw for image outputs.
    pub activate: bool,
}

impl Reconstruct {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, activate: bool) -> Result<Self> {
        Ok(Reconstruct {
            conv: Conv2d::new(store, &format!("{name}.conv"), c_in, 4 * c_out, 3)?,
            c_out,
            activate,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, x)?;
        let y = g.pixel_shuffle(y, 2)?;
        if self.activate {
            lrelu(g, y)
        } else {
            Ok(y)
        }
    }
}
