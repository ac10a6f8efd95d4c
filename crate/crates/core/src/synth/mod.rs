//! Deterministic synthetic depth-completion data.
//!
//! Each scene is rendered densely, quantized to the 1/256 m precision of the
//! KITTI PNG format, then subsampled twice: a sparse input (~4%) and a
//! semi-dense ground truth (~16%), both drawn from the same dense map.

pub mod sample;
pub mod scene;

use rayon::prelude::*;

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use sample::{augment, sparsify, AugmentConfig, Pattern};
pub use scene::{render, Camera, GroundPlane, Primitive, SceneRanges, SceneSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub scenes: usize,
    pub height: usize,
    pub width: usize,
    pub sparse_density: f64,
    pub gt_density: f64,
    pub sparse_pattern: Pattern,
    pub seed: u64,
    pub ranges: SceneRanges,
    /// Fractions of scenes in the train and validation splits; the rest is test.
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scenes: 200,
            height: 64,
            width: 256,
            sparse_density: 0.04,
            gt_density: 0.16,
            sparse_pattern: Pattern::Scanline,
            seed: 0,
            ranges: SceneRanges::default(),
            train_fraction: 0.8,
            val_fraction: 0.1,
        }
    }
}

impl SynthConfig {
    /// `(train, val, test)` scene counts.
    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let train = (self.scenes as f64 * self.train_fraction).round() as usize;
        let val = ((self.scenes as f64 * self.val_fraction).round() as usize)
            .min(self.scenes - train.min(self.scenes));
        let train = train.min(self.scenes);
        (train, val, self.scenes - train - val)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenes == 0 {
            return Err(Error::InvalidArgument(
                "scene count must be positive".into(),
            ));
        }
        if self.height % 8 != 0 || self.width % 8 != 0 || self.height == 0 || self.width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image size {}x{} must be positive multiples of 8",
                self.height, self.width
            )));
        }
        if !(self.train_fraction >= 0.0
            && self.val_fraction >= 0.0
            && self.train_fraction + self.val_fraction <= 1.0)
        {
            return Err(Error::InvalidArgument(
                "split fractions must be non-negative and sum to at most 1".into(),
            ));
        }
        Ok(())
    }
}

/// splitmix64 of `base` mixed with a stream index and salt.
pub fn derive_seed(base: u64, index: u64, salt: u64) -> u64 {
    let mut z = base
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(salt.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Round depths to the nearest multiple of 1/256 m.
pub fn quantize_depth(dense: &Tensor<f32>) -> Tensor<f32> {
    dense.map(|d| ((d as f64 * 256.0).round() / 256.0) as f32)
}

/// Scene `index` of the dataset described by `cfg`.
pub fn generate_sample(cfg: &SynthConfig, index: usize) -> Result<Sample> {
    let seed = derive_seed(cfg.seed, index as u64, 0);
    let spec = SceneSpec::random(seed, cfg.height, cfg.width, &cfg.ranges);
    let (color, dense) = render(&spec)?;
    let dense = quantize_depth(&dense);
    let sparse = sparsify(
        &dense,
        cfg.sparse_density,
        cfg.sparse_pattern,
        derive_seed(cfg.seed, index as u64, 1),
    )?;
    let gt = sparsify(
        &dense,
        cfg.gt_density,
        Pattern::Uniform,
        derive_seed(cfg.seed, index as u64, 2),
    )?;
    Sample::new(color, sparse, gt)
}

/// Generate every scene (in parallel, deterministic per index) and split them
/// in index order into train / val / test.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let samples: Vec<Sample> = (0..cfg.scenes)
        .into_par_iter()
        .map(|i| generate_sample(cfg, i))
        .collect::<Result<_>>()?;
    let (train, val, _) = cfg.split_sizes();
    let mut it = samples.into_iter();
    Ok(Dataset {
        train: it.by_ref().take(train).collect(),
        val: it.by_ref().take(val).collect(),
        test: it.collect(),
    })
}
