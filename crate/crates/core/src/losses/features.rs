use crate::autograd::nn::{lrelu, Conv2d};
use crate::autograd::{Graph, ParamStore, Scalar, Var};
use crate::error::{Error, Result};

/// Frozen, seeded four-layer conv stack whose last-layer activations define
/// the feature loss.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub convs: Vec<Conv2d>,
    pub store: ParamStore,
}

impl FeatureExtractor {
    pub const WIDTHS: [usize; 5] = [3, 8, 8, 16, 16];

    pub fn new(seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(seed);
        let convs = Self::WIDTHS
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv2d::new(&mut store, &format!("features.conv{i}"), w[0], w[1], 3))
            .collect::<Result<_>>()?;
        Ok(FeatureExtractor { convs, store })
    }

    /// Expects the extractor store to be bound in `g` (frozen).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, image: Var) -> Result<Var> {
        let mut h = image;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(g, h)?;
            if i + 1 < self.convs.len() {
                h = lrelu(g, h)?;
            }
        }
        Ok(h)
    }

    /// Mean squared difference of features; `hr_features` may be
    /// precomputed as a constant.
    pub fn loss<T: Scalar>(&self, g: &mut Graph<'_, T>, sr: Var, hr_features: Var) -> Result<Var> {
        let fs = self.forward(g, sr)?;
        if g.shape(fs) != g.shape(hr_features) {
            return Err(Error::dim(format!(
                "feature loss: {:?} vs {:?}",
                g.shape(fs),
                g.shape(hr_features)
            )));
        }
        g.mean_sq_diff(fs, hr_features)
    }
}
