//! Frequency-aware face hallucination: a progressive super-resolution
//! generator with a DCT-coefficient autoencoder branch and a morphable-model
//! structural-constraint branch, trained adversarially on a small
//! deterministic tensor engine.

pub mod autograd;
pub mod blocks;
pub mod data;
pub mod error;
pub mod freq;
pub mod generator;
pub mod losses;
pub mod morph;
pub mod train;

pub use error::{Error, Result};
