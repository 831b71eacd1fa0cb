//! Encoder-decoder over DCT coefficient grids: stride-2 downsampling,
//! sub-pixel upsampling past the input resolution, additive skips, and no
//! normalization layers.

use super::GeneratorConfig;
use crate::autograd::nn::{lrelu, Conv2d};
use crate::autograd::{Graph, ParamStore, Scalar, Var};
use crate::blocks::Reconstruct;
use crate::error::{Error, Result};
use crate::freq::BLOCK;

const COEFFS: usize = BLOCK * BLOCK;

#[derive(Clone, Debug)]
pub struct DctAutoencoder {
    input: Conv2d,
    downs: Vec<Conv2d>,
    ups: Vec<Reconstruct>,
    output: Conv2d,
    in_grid: usize,
}

impl DctAutoencoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &GeneratorConfig) -> Result<Self> {
        let (a, d) = (cfg.ae_width, cfg.ae_downs());
        let width = |level: usize| if level == 0 { a } else { 2 * a };
        let input = Conv2d::new(store, &format!("{name}.input"), COEFFS, a, 3)?;
        let downs = (0..d)
            .map(|i| Conv2d::with_options(store, &format!("{name}.down{i}"), width(i), width(i + 1), 3, 2, 1.0))
            .collect::<Result<_>>()?;
        let ups = (0..d + cfg.stages())
            .map(|j| {
                let from = d.saturating_sub(j);
                let to = d.saturating_sub(j + 1);
                Reconstruct::new(store, &format!("{name}.up{j}"), width(from), width(to), true)
            })
            .collect::<Result<_>>()?;
        let output = Conv2d::new(store, &format!("{name}.output"), a, COEFFS, 3)?;
        Ok(DctAutoencoder {
            input,
            downs,
            ups,
            output,
            in_grid: cfg.lr_grid(),
        })
    }

    /// Maps a `[64, g, g]` LR grid to a `[64, g*scale, g*scale]` HR grid.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, grid: Var) -> Result<Var> {
        let shape = g.shape(grid);
        if shape != [COEFFS, self.in_grid, self.in_grid] {
            return Err(Error::dim(format!(
                "autoencoder expects grid [{COEFFS}, {0}, {0}], got {shape:?}",
                self.in_grid
            )));
        }
        let h = self.input.forward(g, grid)?;
        let mut skips = vec![lrelu(g, h)?];
        for conv in &self.downs {
            let last = *skips.last().expect("non-empty");
            let h = conv.forward(g, last)?;
            skips.push(lrelu(g, h)?);
        }
        let mut h = skips.pop().expect("non-empty");
        for up in &self.ups {
            h = up.forward(g, h)?;
            if let Some(skip) = skips.pop() {
                h = g.add(h, skip)?;
            }
        }
        self.output.forward(g, h)
    }

    /// Parameters of the encoder half (input and stride-2 convs).
    pub fn encoder_params(&self) -> Vec<crate::autograd::ParamId> {
        std::iter::once(&self.input)
            .chain(&self.downs)
            .flat_map(|c| [Some(c.weight), c.bias].into_iter().flatten())
            .collect()
    }
}
