//! Deterministic N-D tensors with define-by-run reverse-mode differentiation.

pub mod check;
mod graph;
mod kernels;
pub mod nn;
mod params;
mod tensor;

pub use graph::{CustomBackward, Gradients, Graph, Var};
pub use params::{keyed_rng, load_tensors, save_tensors, ParamId, ParamStore};
pub use tensor::{Scalar, Tensor};

#[allow(unused_imports)]
pub(crate) use params::write_file;

/// `[C*r*r, H, W] -> [C, rH, rW]` outside a graph.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> crate::Result<Tensor<T>> {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = g.pixel_shuffle(v, r)?;
    Ok(g.value(y).clone())
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> crate::Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(crate::Error::Dimension(format!(
            "pixel_unshuffle: {h}x{w} not divisible by {r}"
        )));
    }
    let data = kernels::pixel_shuffle(x.data(), c, h / r, w / r, r, true);
    Tensor::new(&[c * r * r, h / r, w / r], data)
}

#[cfg(test)]
mod tests;
