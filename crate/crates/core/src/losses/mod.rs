//! Training objectives: DCT-grid L1, structural-constraint L1, fixed-feature
//! MSE, the non-saturating adversarial pair, and their weighted sum.

mod discriminator;
mod features;

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use features::FeatureExtractor;

use crate::autograd::{Graph, Scalar, Var};
use crate::error::{Error, Result};

/// Probability clamp applied before logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1e-3,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma].iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::usage(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

fn same_shape<T: Scalar>(g: &Graph<'_, T>, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::dim(format!("{what}: {:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

/// Mean absolute difference over all coefficients of two grids.
pub fn dct_loss<T: Scalar>(g: &mut Graph<'_, T>, pred: Var, target: Var) -> Result<Var> {
    same_shape(g, pred, target, "dct loss")?;
    g.mean_abs_diff(pred, target)
}

/// Mean absolute pixel difference against the rendered target.
pub fn ssc_loss<T: Scalar>(g: &mut Graph<'_, T>, pred: Var, target: Var) -> Result<Var> {
    same_shape(g, pred, target, "ssc loss")?;
    g.mean_abs_diff(pred, target)
}

/// Generator term `-ln d_fake`.
pub fn generator_adv_loss<T: Scalar>(g: &mut Graph<'_, T>, d_fake: Var) -> Result<Var> {
    let l = g.ln_clamped(d_fake, T::of(PROB_EPS))?;
    let l = g.sum(l)?;
    g.scale(l, T::of(-1.0))
}

/// Discriminator term `-[ln d_real + ln(1 - d_fake)]`.
pub fn discriminator_loss<T: Scalar>(g: &mut Graph<'_, T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let lr = g.ln_clamped(d_real, T::of(PROB_EPS))?;
    let one_minus = g.scale(d_fake, T::of(-1.0))?;
    let one_minus = g.add_scalar(one_minus, T::one())?;
    let lf = g.ln_clamped(one_minus, T::of(PROB_EPS))?;
    let s = g.add(lr, lf)?;
    let s = g.sum(s)?;
    g.scale(s, T::of(-1.0))
}

/// `(g_loss, d_loss)` for scalar discriminator outputs.
pub fn adversarial_losses(d_real: f64, d_fake: f64) -> Result<(f64, f64)> {
    for (name, p) in [("d_real", d_real), ("d_fake", d_fake)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::usage(format!("{name} = {p} is not a probability")));
        }
    }
    let ln = |p: f64| p.max(PROB_EPS).ln();
    Ok((-ln(d_fake), -(ln(d_real) + ln(1.0 - d_fake))))
}

/// Per-example loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub vgg: f64,
    pub adv: f64,
    pub dct: f64,
    pub ssc: f64,
}

pub fn final_loss(p: &LossParts, w: &LossWeights) -> Result<f64> {
    if ![p.vgg, p.adv, p.dct, p.ssc].iter().all(|v| v.is_finite()) {
        return Err(Error::numeric(format!("non-finite loss term: {p:?}")));
    }
    Ok(p.vgg + w.alpha * p.adv + w.beta * p.dct + w.gamma * p.ssc)
}

/// Graph form of [`final_loss`]; absent terms contribute nothing.
pub fn combine_losses<T: Scalar>(
    g: &mut Graph<'_, T>,
    vgg: Var,
    adv: Option<Var>,
    dct: Option<Var>,
    ssc: Option<Var>,
    w: &LossWeights,
) -> Result<Var> {
    let mut total = vgg;
    for (term, weight) in [(adv, w.alpha), (dct, w.beta), (ssc, w.gamma)] {
        if let Some(t) = term {
            if weight != 0.0 {
                let s = g.scale(t, T::of(weight))?;
                total = g.add(total, s)?;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests;
