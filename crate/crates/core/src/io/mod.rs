//! File formats: KITTI depth PNGs, colour PNGs, and the on-disk dataset
//! layout `<split>/<scene>/{image,sparse,groundtruth}/NNNNNNNNNN.png`.

pub mod layout;
pub mod png_codec;

pub use layout::{read_split, write_dataset, write_sample};
pub use png_codec::{
    read_color_png, read_depth_png, write_color_png, write_depth_png, write_rgb8, SparseDepthMap,
    MAX_DEPTH_M,
};
