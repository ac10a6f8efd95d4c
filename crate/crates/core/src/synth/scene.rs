//! Ray-cast toy street scenes: a ground plane, axis-aligned boxes and spheres
//! seen by a forward-looking pinhole camera (x right, y down, z forward).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    /// Principal point at the image centre and a ~80 degree horizontal field of view.
    pub fn centered(height: usize, width: usize) -> Self {
        Self {
            focal: width as f64 * 0.6,
            cx: width as f64 / 2.0,
            cy: height as f64 * 0.4,
        }
    }

    fn ray(&self, v: usize, u: usize) -> [f64; 3] {
        [
            (u as f64 + 0.5 - self.cx) / self.focal,
            (v as f64 + 0.5 - self.cy) / self.focal,
            1.0,
        ]
    }
}

/// Ground below the camera at `height` metres, rising by `tan(tilt)` per metre
/// of forward distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundPlane {
    pub height: f64,
    pub tilt: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Box {
        min: [f64; 3],
        max: [f64; 3],
        albedo: [f64; 3],
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        albedo: [f64; 3],
    },
}

impl Primitive {
    /// Ray parameter of the first hit with `t > 0`; with the ray's `z = 1`
    /// this is also the hit depth.
    fn intersect(&self, dir: [f64; 3]) -> Option<f64> {
        match self {
            Primitive::Box { min, max, .. } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for a in 0..3 {
                    if dir[a] == 0.0 {
                        if min[a] > 0.0 || max[a] < 0.0 {
                            return None;
                        }
                        continue;
                    }
                    let (mut n, mut f) = (min[a] / dir[a], max[a] / dir[a]);
                    if n > f {
                        std::mem::swap(&mut n, &mut f);
                    }
                    t0 = t0.max(n);
                    t1 = t1.min(f);
                }
                (t0 <= t1 && t0 > 0.0).then_some(t0)
            }
            Primitive::Sphere { center, radius, .. } => {
                let a: f64 = dir.iter().map(|d| d * d).sum();
                let b: f64 = dir.iter().zip(center).map(|(d, c)| d * c).sum();
                let cc: f64 = center.iter().map(|c| c * c).sum::<f64>() - radius * radius;
                let disc = b * b - a * cc;
                if disc < 0.0 {
                    return None;
                }
                let t = (b - disc.sqrt()) / a;
                (t > 0.0).then_some(t)
            }
        }
    }

    fn albedo(&self) -> [f64; 3] {
        match self {
            Primitive::Box { albedo, .. } | Primitive::Sphere { albedo, .. } => *albedo,
        }
    }
}

/// Full description of one synthetic frame. Same spec, same pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub camera: Camera,
    pub ground: Option<GroundPlane>,
    pub primitives: Vec<Primitive>,
    /// Depth of the sky backdrop and upper bound of every rendered depth.
    pub d_max: f64,
}

/// Randomization ranges for [`SceneSpec::random`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneRanges {
    pub min_primitives: usize,
    pub max_primitives: usize,
    pub min_depth: f64,
    pub near_limit: f64,
    /// Fraction of primitives placed closer than `near_limit`.
    pub near_fraction: f64,
    pub d_max: f64,
}

impl Default for SceneRanges {
    fn default() -> Self {
        Self {
            min_primitives: 4,
            max_primitives: 9,
            min_depth: 2.0,
            near_limit: 20.0,
            near_fraction: 0.7,
            d_max: 80.0,
        }
    }
}

impl SceneSpec {
    pub fn empty(height: usize, width: usize, d_max: f64) -> Self {
        Self {
            seed: 0,
            height,
            width,
            camera: Camera::centered(height, width),
            ground: Some(GroundPlane {
                height: 1.65,
                tilt: 0.0,
            }),
            primitives: Vec::new(),
            d_max,
        }
    }

    pub fn random(seed: u64, height: usize, width: usize, ranges: &SceneRanges) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = Self::empty(height, width, ranges.d_max);
        spec.seed = seed;
        let cam_h = rng.gen_range(1.4..1.9);
        spec.ground = Some(GroundPlane {
            height: cam_h,
            tilt: rng.gen_range(-0.02..0.02),
        });
        let far_hi = (ranges.d_max * 0.9).max(ranges.near_limit + 1.0);
        let count = rng.gen_range(ranges.min_primitives..=ranges.max_primitives);
        for _ in 0..count {
            let z = if rng.gen_bool(ranges.near_fraction) {
                rng.gen_range(ranges.min_depth..ranges.near_limit)
            } else {
                rng.gen_range(ranges.near_limit..far_hi)
            };
            let half_fov = spec.camera.cx / spec.camera.focal;
            let x = rng.gen_range(-1.0..1.0) * z * half_fov;
            let albedo = [
                rng.gen_range(0.15..1.0),
                rng.gen_range(0.15..1.0),
                rng.gen_range(0.15..1.0),
            ];
            if rng.gen_bool(0.7) {
                let w = rng.gen_range(0.8..4.0);
                let h = rng.gen_range(1.0..4.0);
                let d = rng.gen_range(0.8..4.0);
                spec.primitives.push(Primitive::Box {
                    min: [x - w / 2.0, cam_h - h, z],
                    max: [x + w / 2.0, cam_h, z + d],
                    albedo,
                });
            } else {
                let r = rng.gen_range(0.5..2.0);
                spec.primitives.push(Primitive::Sphere {
                    center: [x, cam_h - r, z + r],
                    radius: r,
                    albedo,
                });
            }
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.height % 8 != 0 || self.width % 8 != 0 {
            return Err(Error::InvalidArgument(format!(
                "scene size {}x{} must be positive multiples of 8",
                self.height, self.width
            )));
        }
        let c = &self.camera;
        if !(c.focal > 0.0 && c.focal.is_finite() && c.cx.is_finite() && c.cy.is_finite()) {
            return Err(Error::InvalidArgument(format!("degenerate camera {c:?}")));
        }
        if !(self.d_max > 0.0 && self.d_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "d_max must be positive, got {}",
                self.d_max
            )));
        }
        Ok(())
    }
}

fn shade(albedo: [f64; 3], depth: f64) -> [f64; 3] {
    let s = 0.35 + 0.65 * (-depth / 30.0).exp();
    albedo.map(|a| a * s)
}

fn quantize8(v: f64) -> f32 {
    ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
}

/// Colour image (`3 x H x W`, 8-bit quantized values in `[0, 1]`) and dense
/// depth (`1 x H x W`, metres, every pixel in `(0, d_max]`).
pub fn render(spec: &SceneSpec) -> Result<(Tensor<f32>, Tensor<f32>)> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let plane = h * w;
    let mut color = vec![0f32; 3 * plane];
    let mut depth = vec![0f32; plane];
    const SKY: [f64; 3] = [0.55, 0.7, 0.9];
    for v in 0..h {
        for u in 0..w {
            let dir = spec.camera.ray(v, u);
            let mut best = spec.d_max;
            let mut rgb = SKY;
            if let Some(g) = spec.ground {
                let denom = dir[1] + g.tilt.tan();
                if denom > 0.0 {
                    let t = g.height / denom;
                    if t < best {
                        best = t;
                        let (gx, gz) = (t * dir[0], t);
                        let checker = ((gx / 2.0).floor() + (gz / 2.0).floor()).rem_euclid(2.0);
                        let base = 0.35 + 0.1 * checker;
                        rgb = shade([base, base, base * 0.95], t);
                    }
                }
            }
            for p in &spec.primitives {
                if let Some(t) = p.intersect(dir) {
                    if t < best {
                        best = t;
                        rgb = shade(p.albedo(), t);
                    }
                }
            }
            let i = v * w + u;
            depth[i] = best as f32;
            for c in 0..3 {
                color[c * plane + i] = quantize8(rgb[c]);
            }
        }
    }
    Ok((
        Tensor::from_vec(&[3, h, w], color)?,
        Tensor::from_vec(&[1, h, w], depth)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_ground_depth_grows_towards_horizon() {
        let spec = SceneSpec::empty(32, 64, 80.0);
        let (_, d) = render(&spec).unwrap();
        let horizon = spec.camera.cy.floor() as usize;
        for u in [0, 31, 63] {
            for v in horizon + 1..31 {
                assert!(d.at(0, v, u) > d.at(0, v + 1, u), "column {u} row {v}");
            }
        }
        assert!(d.data().iter().all(|&x| x > 0.0 && x <= 80.0));
    }

    #[test]
    fn fronto_parallel_box_depth_is_exact() {
        let mut spec = SceneSpec::empty(32, 64, 80.0);
        spec.primitives.push(Primitive::Box {
            min: [-2.0, -2.0, 10.0],
            max: [2.0, 1.65, 12.0],
            albedo: [0.5; 3],
        });
        let (_, d) = render(&spec).unwrap();
        let (cv, cu) = (spec.camera.cy as usize, spec.camera.cx as usize);
        for (v, u) in [(cv, cu), (cv - 2, cu + 5), (cv + 3, cu - 8)] {
            assert_eq!(d.at(0, v, u), 10.0);
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let r = SceneRanges::default();
        let a = render(&SceneSpec::random(42, 64, 256, &r)).unwrap();
        let b = render(&SceneSpec::random(42, 64, 256, &r)).unwrap();
        assert_eq!(a, b);
        let c = render(&SceneSpec::random(43, 64, 256, &r)).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn degenerate_camera_rejected() {
        let mut spec = SceneSpec::empty(16, 16, 80.0);
        spec.camera.focal = 0.0;
        assert!(render(&spec).is_err());
        assert!(render(&SceneSpec::empty(12, 16, 80.0)).is_err());
    }
}
