//! Parameterized layers. Parameters are created in an `f32` store; forwards
//! are generic so the same layer runs against a cast `f64` copy.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Scalar;
use crate::error::{Error, Result};

/// LeakyReLU negative slope used throughout the networks.
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn lrelu<T: Scalar>(g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
    g.leaky_relu(x, T::of(LEAKY_SLOPE))
}

/// Square-kernel convolution with "same" zero padding (`k / 2`).
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<Self> {
        Self::with_options(store, name, c_in, c_out, k, 1, 1.0)
    }

    /// `gain` scales the He standard deviation.
    pub fn with_options(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        gain: f64,
    ) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::usage(format!("{name}: kernel size {k} must be odd")));
        }
        let weight = store.he_normal(&format!("{name}.weight"), &[c_out, c_in, k, k], c_in * k * k, gain)?;
        let bias = Some(store.zeros(&format!("{name}.bias"), &[c_out])?);
        Ok(Conv2d {
            weight,
            bias,
            c_in,
            c_out,
            k,
            stride,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight)?;
        let b = self.bias.map(|b| g.param(b)).transpose()?;
        g.conv2d(x, w, b, self.stride, self.k / 2)
    }

    pub fn num_params(&self) -> usize {
        self.c_out * self.c_in * self.k * self.k + self.bias.map_or(0, |_| self.c_out)
    }
}

/// Per-channel `k×k` convolution.
#[derive(Clone, Debug)]
pub struct DepthwiseConv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub channels: usize,
    pub k: usize,
}

impl DepthwiseConv2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, k: usize) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::usage(format!("{name}: kernel size {k} must be odd")));
        }
        let weight = store.he_normal(&format!("{name}.weight"), &[channels, 1, k, k], k * k, 1.0)?;
        let bias = Some(store.zeros(&format!("{name}.bias"), &[channels])?);
        Ok(DepthwiseConv2d {
            weight,
            bias,
            channels,
            k,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight)?;
        let b = self.bias.map(|b| g.param(b)).transpose()?;
        g.depthwise_conv2d(x, w, b, 1, self.k / 2)
    }

    pub fn num_params(&self) -> usize {
        self.channels * self.k * self.k + self.bias.map_or(0, |_| self.channels)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize) -> Result<Self> {
        Self::with_gain(store, name, n_in, n_out, 1.0)
    }

    pub fn with_gain(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize, gain: f64) -> Result<Self> {
        let weight = store.he_normal(&format!("{name}.weight"), &[n_out, n_in], n_in, gain)?;
        let bias = store.zeros(&format!("{name}.bias"), &[n_out])?;
        Ok(Linear {
            weight,
            bias,
            n_in,
            n_out,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight)?;
        let b = g.param(self.bias)?;
        g.linear(x, w, Some(b))
    }

    pub fn num_params(&self) -> usize {
        self.n_out * self.n_in + self.n_out
    }
}

/// Depthwise `k×k` convolution followed by a `1×1` channel mix, both
/// bias-free, with `dw_weight[C,1,k,k]` and `pw_weight[C_out,C,1,1]`.
pub fn depthwise_separable_conv<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    dw_weight: Var,
    pw_weight: Var,
) -> Result<Var> {
    let k = g.shape(dw_weight).get(2).copied().unwrap_or(1);
    let spatial = g.depthwise_conv2d(x, dw_weight, None, 1, k / 2)?;
    g.conv2d(spatial, pw_weight, None, 1, 0)
}

/// Bottleneck width of the excitation MLP; never below one unit.
pub fn squeeze_width(channels: usize, reduction: usize) -> usize {
    (channels / reduction.max(1)).max(1)
}

/// Squeeze-and-excitation gate: global pool, `C -> C/r` FC, LeakyReLU,
/// `-> C` FC, sigmoid, then per-channel rescaling of the input.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub squeeze: Linear,
    pub excite: Linear,
    pub channels: usize,
}

impl SqueezeExcite {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        let hidden = squeeze_width(channels, reduction);
        Ok(SqueezeExcite {
            squeeze: Linear::new(store, &format!("{name}.squeeze"), channels, hidden)?,
            excite: Linear::new(store, &format!("{name}.excite"), hidden, channels)?,
            channels,
        })
    }

    /// Gate values in `(0,1)^C`.
    pub fn gate<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let pooled = g.global_avg_pool(x)?;
        let h = self.squeeze.forward(g, pooled)?;
        let h = lrelu(g, h)?;
        let e = self.excite.forward(g, h)?;
        g.sigmoid(e)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gate = self.gate(g, x)?;
        g.channel_scale(x, gate)
    }

    pub fn num_params(&self) -> usize {
        self.squeeze.num_params() + self.excite.num_params()
    }
}
