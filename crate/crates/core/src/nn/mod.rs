//! Minimal differentiable core: convolutions (standard, pointwise,
//! sparsity-invariant), residual blocks, resampling and a tape recorder with
//! analytic backward passes.

pub mod conv;
pub mod graph;
pub mod layers;
pub mod params;

pub use conv::{conv2d, pointwise_conv, si_conv2d, ConvLayer, Padding, SI_EPSILON};
pub use graph::{Gradients, Graph, Var};
pub use layers::{
    downsample2x, relu, residual_block, upsample2x, upsample_nearest2x, ResidualParams,
};
pub use params::{ParamId, ParamStore};
