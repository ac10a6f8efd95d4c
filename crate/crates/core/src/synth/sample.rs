//! Subsampling dense depth into LiDAR-like inputs and semi-dense ground truth,
//! and training-time augmentation.

use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::png_codec::flip_tensor;
use crate::io::SparseDepthMap;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Pattern {
    /// Independent pixels, exact count.
    #[default]
    Uniform,
    /// Pixels along gently undulating horizontal beams.
    Scanline,
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Pattern::Uniform),
            "scanline" => Ok(Pattern::Scanline),
            other => Err(Error::Config(format!(
                "unknown pattern {other:?} (expected uniform | scanline)"
            ))),
        }
    }
}

impl std::fmt::Display for Pattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pattern::Uniform => "uniform",
            Pattern::Scanline => "scanline",
        })
    }
}

/// Keep `round(density * H * W)` pixels of `dense` (at least one); the rest
/// become invalid. Kept pixels carry the dense value unchanged.
pub fn sparsify(
    dense: &Tensor<f32>,
    density: f64,
    pattern: Pattern,
    seed: u64,
) -> Result<SparseDepthMap<f32>> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "density must be in (0, 1], got {density}"
        )));
    }
    let (c, h, w) = dense.chw()?;
    if c != 1 {
        return Err(Error::Shape(format!(
            "dense depth must be single-channel, got {:?}",
            dense.shape()
        )));
    }
    let n = h * w;
    let target = ((density * n as f64).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let keep: Vec<usize> = match pattern {
        Pattern::Uniform => index::sample(&mut rng, n, target).into_vec(),
        Pattern::Scanline => {
            let mut candidate = vec![false; n];
            // Twice as many beam pixels as needed, then thin out.
            let beams = ((2 * target).div_ceil(w)).clamp(1, h);
            let amp = if beams * 2 > h {
                0.0
            } else {
                (h as f64 / beams as f64) * 0.25
            };
            let freq = rng.gen_range(0.5..2.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            for b in 0..beams {
                let base = (b as f64 + 0.5) * h as f64 / beams as f64;
                for x in 0..w {
                    let t = x as f64 / w as f64 * std::f64::consts::TAU * freq + phase + b as f64;
                    let y = (base + amp * t.sin()).floor().clamp(0.0, (h - 1) as f64) as usize;
                    candidate[y * w + x] = true;
                }
            }
            let mut pool: Vec<usize> = (0..n).filter(|&i| candidate[i]).collect();
            if pool.len() < target {
                let mut rest: Vec<usize> = (0..n).filter(|&i| !candidate[i]).collect();
                let extra = index::sample(&mut rng, rest.len(), target - pool.len());
                pool.extend(extra.iter().map(|i| rest[i]));
                rest.clear();
                pool.sort_unstable();
            }
            index::sample(&mut rng, pool.len(), target)
                .iter()
                .map(|i| pool[i])
                .collect()
        }
    };

    let mut out = vec![0f32; n];
    for i in keep {
        out[i] = dense.data()[i];
    }
    SparseDepthMap::from_depth(Tensor::from_vec(&[1, h, w], out)?)
}

/// Colour jitter and joint horizontal flipping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Max relative change of brightness, contrast and saturation, `<= 0.2`.
    pub jitter: f64,
    pub flip_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            jitter: 0.2,
            flip_probability: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            jitter: 0.0,
            flip_probability: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.2).contains(&self.jitter) {
            return Err(Error::InvalidArgument(format!(
                "jitter amplitude must be in [0, 0.2], got {}",
                self.jitter
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::InvalidArgument(format!(
                "flip probability must be in [0, 1], got {}",
                self.flip_probability
            )));
        }
        Ok(())
    }
}

fn jitter_color(color: &Tensor<f32>, amp: f64, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let brightness = rng.gen_range(1.0 - amp..=1.0 + amp) as f32;
    let contrast = rng.gen_range(1.0 - amp..=1.0 + amp) as f32;
    let saturation = rng.gen_range(1.0 - amp..=1.0 + amp) as f32;
    let plane = color.len() / 3;
    let d = color.data();
    let mean = d.iter().sum::<f32>() / d.len() as f32 * brightness;
    let mut out = vec![0f32; d.len()];
    for i in 0..plane {
        let rgb = [
            d[i] * brightness,
            d[plane + i] * brightness,
            d[2 * plane + i] * brightness,
        ];
        let gray = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
        for c in 0..3 {
            let s = gray + (rgb[c] - gray) * saturation;
            out[c * plane + i] = ((s - mean) * contrast + mean).clamp(0.0, 1.0);
        }
    }
    Tensor::from_vec(color.shape(), out).expect("same shape")
}

/// Returns augmented `(color, sparse, gt)`. Depth values are never altered,
/// only mirrored together with the image.
pub fn augment(
    color: &Tensor<f32>,
    sparse: &SparseDepthMap<f32>,
    gt: &SparseDepthMap<f32>,
    config: &AugmentConfig,
    seed: u64,
) -> Result<(Tensor<f32>, SparseDepthMap<f32>, SparseDepthMap<f32>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flip = rng.gen_bool(config.flip_probability);
    let mut color = if config.jitter > 0.0 {
        jitter_color(color, config.jitter, &mut rng)
    } else {
        color.clone()
    };
    let (mut sparse, mut gt) = (sparse.clone(), gt.clone());
    if flip {
        color = flip_tensor(&color);
        sparse = sparse.flip_horizontal();
        gt = gt.flip_horizontal();
    }
    Ok((color, sparse, gt))
}
