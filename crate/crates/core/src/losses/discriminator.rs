use crate::autograd::nn::{lrelu, Conv2d, Linear};
use crate::autograd::{Graph, ParamStore, Scalar, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub input_size: usize,
    /// Output width of each stride-2 conv.
    pub widths: Vec<usize>,
    pub dense: usize,
}

impl DiscriminatorConfig {
    pub fn full() -> Self {
        DiscriminatorConfig {
            input_size: 128,
            widths: vec![64, 128, 256, 512],
            dense: 1024,
        }
    }

    pub fn toy(input_size: usize) -> Self {
        DiscriminatorConfig {
            input_size,
            widths: vec![16, 32, 32, 64],
            dense: 64,
        }
    }

    fn final_side(&self) -> usize {
        self.widths.iter().fold(self.input_size, |s, _| s.div_ceil(2))
    }
}

/// Strided conv stack, dense layer, LeakyReLU, dense to one logit, sigmoid.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub cfg: DiscriminatorConfig,
    pub convs: Vec<Conv2d>,
    pub hidden: Linear,
    pub output: Linear,
}

impl Discriminator {
    pub fn new(store: &mut ParamStore, cfg: DiscriminatorConfig) -> Result<Self> {
        if cfg.widths.is_empty() || cfg.input_size == 0 || cfg.dense == 0 {
            return Err(Error::usage("discriminator needs at least one conv and a dense width"));
        }
        let mut c_in = 3;
        let mut convs = Vec::new();
        for (i, &w) in cfg.widths.iter().enumerate() {
            convs.push(Conv2d::with_options(store, &format!("disc.conv{i}"), c_in, w, 3, 2, 1.0)?);
            c_in = w;
        }
        let side = cfg.final_side();
        let flat = c_in * side * side;
        Ok(Discriminator {
            hidden: Linear::new(store, "disc.hidden", flat, cfg.dense)?,
            output: Linear::new(store, "disc.output", cfg.dense, 1)?,
            convs,
            cfg,
        })
    }

    /// Probability that `image` is a real HR sample, shape `[1]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, image: Var) -> Result<Var> {
        let n = self.cfg.input_size;
        if g.shape(image) != [3, n, n] {
            return Err(Error::dim(format!(
                "discriminator expects [3, {n}, {n}], got {:?}",
                g.shape(image)
            )));
        }
        let mut h = image;
        for conv in &self.convs {
            h = conv.forward(g, h)?;
            h = lrelu(g, h)?;
        }
        let h = self.hidden.forward(g, h)?;
        let h = lrelu(g, h)?;
        let logit = self.output.forward(g, h)?;
        g.sigmoid(logit)
    }
}
