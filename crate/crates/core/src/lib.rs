//! Confidence-guided sparse depth completion on a small CPU autodiff core.
//!
//! The pipeline: a coarse-prediction encoder-decoder produces a first dense
//! depth map, two refinement branches (color-guided and depth-guided) each
//! predict a depth map with a confidence, and a softmax over the confidences
//! fuses them into the final map.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod io;
pub mod kv;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor, ValidityMask};
