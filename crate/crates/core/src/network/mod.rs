//! The two-stage architecture: coarse prediction (CP), then colour- and
//! depth-refinement branches (CR, DR) whose depth maps are fused with their
//! confidence maps.

pub mod blocks;
pub mod checkpoint;
pub mod model;

pub use blocks::{EncoderDecoder, Mode, Sffm};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, OptimizerState, MANIFEST_FILE, PAYLOAD_FILE};
pub use model::{BranchOutput, DepthNet, ForwardVars, NetworkConfig, NetworkOutput, Variant};
