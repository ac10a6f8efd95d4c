//! Confidence-weighted fusion of the two refinement branches and the
//! confidence guidance module (CGM).
//!
//! Fusion is a per-pixel two-way softmax over the branch confidences:
//!
//! ```text
//! D(u,v) = (e^{C_cr} D_cr + e^{C_dr} D_dr) / (e^{C_cr} + e^{C_dr})
//! ```
//!
//! evaluated after subtracting `max(C_cr, C_dr)` so that large logits cannot
//! overflow. The guidance module shifts confidence towards the colour branch
//! where the coarse depth has strong Sobel edges or is far away, and away from
//! the depth branch by the same amount:
//!
//! ```text
//! g = alpha * (boundary(D_c) + farness(D_c))
//! C'_cr = C_cr + g,   C'_dr = C_dr - g
//! ```

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Branch confidences as unbounded logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidencePair<T> {
    pub c_cr: Tensor<T>,
    pub c_dr: Tensor<T>,
}

impl<T: Scalar> ConfidencePair<T> {
    pub fn new(c_cr: Tensor<T>, c_dr: Tensor<T>) -> Result<Self> {
        if c_cr.shape() != c_dr.shape() {
            return Err(Error::Shape(format!(
                "confidences {:?} vs {:?}",
                c_cr.shape(),
                c_dr.shape()
            )));
        }
        if !c_cr.is_finite() || !c_dr.is_finite() {
            return Err(Error::NonFinite("confidence map".into()));
        }
        Ok(Self { c_cr, c_dr })
    }
}

/// Settings of the confidence guidance module.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidanceConfig {
    /// Guidance strength, `>= 0`. Zero disables guidance.
    pub alpha: f64,
    /// Depth mapped to farness 1.
    pub d_max: f64,
    /// Quantile of the Sobel magnitude mapped to boundary 1.
    pub percentile: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            d_max: 80.0,
            percentile: 0.99,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "guidance alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.d_max > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "d_max must be positive, got {}",
                self.d_max
            )));
        }
        if !(self.percentile > 0.0 && self.percentile <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "percentile must be in (0, 1], got {}",
                self.percentile
            )));
        }
        Ok(())
    }
}

/// Boundary and farness priors of a coarse depth map, both in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct GuidancePriors<T> {
    pub boundary: Tensor<T>,
    pub farness: Tensor<T>,
    pub alpha: f64,
}

fn check_same<T: Scalar>(maps: &[&Tensor<T>]) -> Result<()> {
    let first = maps[0];
    for m in maps {
        if m.shape() != first.shape() {
            return Err(Error::Shape(format!(
                "fusion inputs {:?} vs {:?}",
                first.shape(),
                m.shape()
            )));
        }
        if !m.is_finite() {
            return Err(Error::NonFinite("fusion input contains NaN or Inf".into()));
        }
    }
    Ok(())
}

/// Fused map plus the colour-branch softmax weight per pixel.
pub(crate) fn fuse_kernel<T: Scalar>(
    d_cr: &Tensor<T>,
    d_dr: &Tensor<T>,
    c_cr: &Tensor<T>,
    c_dr: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    check_same(&[d_cr, d_dr, c_cr, c_dr])?;
    let n = d_cr.len();
    let mut out = Vec::with_capacity(n);
    let mut w1 = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = (c_cr.data()[i], c_dr.data()[i]);
        let (x, y) = (d_cr.data()[i], d_dr.data()[i]);
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        let s = ea + eb;
        // Rounding can push the quotient a hair outside the branch interval.
        let v = ((ea * x + eb * y) / s).max(x.min(y)).min(x.max(y));
        out.push(v);
        w1.push(ea / s);
    }
    Ok((Tensor::from_vec(d_cr.shape(), out)?, w1))
}

pub(crate) struct FuseGrads<T> {
    pub d1: Vec<T>,
    pub d2: Vec<T>,
    pub c1: Vec<T>,
    pub c2: Vec<T>,
}

pub(crate) fn fuse_backward<T: Scalar>(g: &[T], d1: &[T], d2: &[T], w1: &[T]) -> FuseGrads<T> {
    let n = g.len();
    let mut out = FuseGrads {
        d1: Vec::with_capacity(n),
        d2: Vec::with_capacity(n),
        c1: Vec::with_capacity(n),
        c2: Vec::with_capacity(n),
    };
    for i in 0..n {
        let w = w1[i];
        let dc = g[i] * w * (T::one() - w) * (d1[i] - d2[i]);
        out.d1.push(g[i] * w);
        out.d2.push(g[i] * (T::one() - w));
        out.c1.push(dc);
        out.c2.push(-dc);
    }
    out
}

/// Fuse two depth maps with their raw confidences.
pub fn fuse<T: Scalar>(
    d_cr: &Tensor<T>,
    d_dr: &Tensor<T>,
    conf: &ConfidencePair<T>,
) -> Result<Tensor<T>> {
    Ok(fuse_kernel(d_cr, d_dr, &conf.c_cr, &conf.c_dr)?.0)
}

/// Fuse with guidance-adjusted confidences; identical arithmetic to [`fuse`].
pub fn fuse_final<T: Scalar>(
    d_cr: &Tensor<T>,
    d_dr: &Tensor<T>,
    adjusted: &ConfidencePair<T>,
) -> Result<Tensor<T>> {
    fuse(d_cr, d_dr, adjusted)
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

#[inline]
fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Raw Sobel responses `(gx, gy)` with replicate padding.
pub fn sobel_gradients<T: Scalar>(d: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
    let (c, h, w) = d.chw()?;
    if c != 1 {
        return Err(Error::Shape(format!(
            "Sobel needs a single-channel map, got {:?}",
            d.shape()
        )));
    }
    let src = d.data();
    let mut gx = vec![T::zero(); h * w];
    let mut gy = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let (mut sx, mut sy) = (T::zero(), T::zero());
            for (ky, (rx, ry)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                let sy_i = clamp_idx(y as isize + ky as isize - 1, h);
                for kx in 0..3 {
                    let sx_i = clamp_idx(x as isize + kx as isize - 1, w);
                    let v = src[sy_i * w + sx_i];
                    sx = sx + T::lit(rx[kx]) * v;
                    sy = sy + T::lit(ry[kx]) * v;
                }
            }
            gx[y * w + x] = sx;
            gy[y * w + x] = sy;
        }
    }
    Ok((gx, gy))
}

/// Adjoint of [`sobel_gradients`].
fn sobel_adjoint<T: Scalar>(dgx: &[T], dgy: &[T], h: usize, w: usize) -> Vec<T> {
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let (ax, ay) = (dgx[y * w + x], dgy[y * w + x]);
            for (ky, (rx, ry)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                let sy_i = clamp_idx(y as isize + ky as isize - 1, h);
                for kx in 0..3 {
                    let sx_i = clamp_idx(x as isize + kx as isize - 1, w);
                    let o = &mut out[sy_i * w + sx_i];
                    *o = *o + T::lit(rx[kx]) * ax + T::lit(ry[kx]) * ay;
                }
            }
        }
    }
    out
}

/// How the normalizing scale of the Sobel magnitude was obtained; the backward
/// pass routes the scale's gradient to the pixels it was read from.
#[derive(Clone, Debug)]
enum ScaleSource<T> {
    Zero,
    /// Linear interpolation between two order statistics.
    Quantile {
        lo: usize,
        hi: usize,
        frac: T,
    },
}

#[derive(Clone, Debug)]
struct Boundary<T> {
    gx: Vec<T>,
    gy: Vec<T>,
    mag: Vec<T>,
    scale: T,
    source: ScaleSource<T>,
    values: Vec<T>,
}

fn boundary_forward<T: Scalar>(d: &Tensor<T>, percentile: f64) -> Result<Boundary<T>> {
    let (gx, gy) = sobel_gradients(d)?;
    let mag: Vec<T> = gx
        .iter()
        .zip(&gy)
        .map(|(&a, &b)| (a * a + b * b).sqrt())
        .collect();

    let mut order: Vec<usize> = (0..mag.len()).collect();
    order.sort_by(|&a, &b| {
        mag[a]
            .partial_cmp(&mag[b])
            .expect("finite magnitude")
            .then(a.cmp(&b))
    });
    let rank = percentile * (mag.len() - 1) as f64;
    let (lo_r, hi_r) = (rank.floor() as usize, rank.ceil() as usize);
    let frac = T::lit(rank - lo_r as f64);
    let (lo, hi) = (order[lo_r], order[hi_r]);
    let mut scale = mag[lo] + frac * (mag[hi] - mag[lo]);
    let mut source = ScaleSource::Quantile { lo, hi, frac };
    if scale <= T::zero() {
        // Edges cover less than (1 - percentile) of the image: fall back to the max.
        let top = order[mag.len() - 1];
        scale = mag[top];
        source = if scale > T::zero() {
            ScaleSource::Quantile {
                lo: top,
                hi: top,
                frac: T::zero(),
            }
        } else {
            ScaleSource::Zero
        };
    }
    let values = match source {
        ScaleSource::Zero => vec![T::zero(); mag.len()],
        _ => mag.iter().map(|&m| (m / scale).min(T::one())).collect(),
    };
    Ok(Boundary {
        gx,
        gy,
        mag,
        scale,
        source,
        values,
    })
}

/// Sobel gradient magnitude normalized by its 99th percentile and clamped to
/// `[0, 1]`. Falls back to the maximum when the percentile is zero.
pub fn sobel_magnitude<T: Scalar>(d: &Tensor<T>) -> Result<Tensor<T>> {
    let b = boundary_forward(d, GuidanceConfig::default().percentile)?;
    Tensor::from_vec(d.shape(), b.values)
}

/// Boundary and farness priors of `d_c`.
pub fn priors<T: Scalar>(d_c: &Tensor<T>, cfg: &GuidanceConfig) -> Result<GuidancePriors<T>> {
    cfg.validate()?;
    let b = boundary_forward(d_c, cfg.percentile)?;
    let d_max = T::lit(cfg.d_max);
    Ok(GuidancePriors {
        boundary: Tensor::from_vec(d_c.shape(), b.values)?,
        farness: d_c.map(|v| v.max(T::zero()).min(d_max) / d_max),
        alpha: cfg.alpha,
    })
}

#[derive(Clone, Debug)]
pub(crate) struct GuidanceCache<T> {
    boundary: Boundary<T>,
    depth: Vec<T>,
    alpha: T,
    d_max: T,
    h: usize,
    w: usize,
}

pub(crate) fn guidance_forward<T: Scalar>(
    d_c: &Tensor<T>,
    cfg: &GuidanceConfig,
) -> Result<(Tensor<T>, GuidanceCache<T>)> {
    cfg.validate()?;
    let (_, h, w) = d_c.chw()?;
    let boundary = boundary_forward(d_c, cfg.percentile)?;
    let (alpha, d_max) = (T::lit(cfg.alpha), T::lit(cfg.d_max));
    let g = boundary
        .values
        .iter()
        .zip(d_c.data())
        .map(|(&b, &d)| alpha * (b + d.max(T::zero()).min(d_max) / d_max))
        .collect();
    let cache = GuidanceCache {
        boundary,
        depth: d_c.data().to_vec(),
        alpha,
        d_max,
        h,
        w,
    };
    Ok((Tensor::from_vec(d_c.shape(), g)?, cache))
}

pub(crate) fn guidance_backward<T: Scalar>(g: &[T], cache: &GuidanceCache<T>) -> Vec<T> {
    let n = g.len();
    let (alpha, d_max) = (cache.alpha, cache.d_max);
    let b = &cache.boundary;
    // farness
    let mut d_depth: Vec<T> = (0..n)
        .map(|i| {
            let d = cache.depth[i];
            if d > T::zero() && d < d_max {
                g[i] * alpha / d_max
            } else {
                T::zero()
            }
        })
        .collect();

    if let ScaleSource::Quantile { lo, hi, frac } = b.source {
        let s = b.scale;
        let mut d_mag = vec![T::zero(); n];
        let mut d_scale = T::zero();
        for i in 0..n {
            if b.mag[i] < s {
                let gi = g[i] * alpha;
                d_mag[i] = gi / s;
                d_scale = d_scale - gi * b.mag[i] / (s * s);
            }
        }
        d_mag[lo] = d_mag[lo] + d_scale * (T::one() - frac);
        d_mag[hi] = d_mag[hi] + d_scale * frac;

        let mut dgx = vec![T::zero(); n];
        let mut dgy = vec![T::zero(); n];
        for i in 0..n {
            if b.mag[i] > T::zero() {
                dgx[i] = d_mag[i] * b.gx[i] / b.mag[i];
                dgy[i] = d_mag[i] * b.gy[i] / b.mag[i];
            }
        }
        for (d, s) in d_depth
            .iter_mut()
            .zip(sobel_adjoint(&dgx, &dgy, cache.h, cache.w))
        {
            *d = *d + s;
        }
    }
    d_depth
}

/// Apply confidence guidance to a pair of raw confidences.
pub fn cgm<T: Scalar>(
    d_c: &Tensor<T>,
    conf: &ConfidencePair<T>,
    cfg: &GuidanceConfig,
) -> Result<ConfidencePair<T>> {
    check_same(&[d_c, &conf.c_cr, &conf.c_dr])?;
    let (g, _) = guidance_forward(d_c, cfg)?;
    let c_cr = Tensor::from_vec(
        d_c.shape(),
        conf.c_cr
            .data()
            .iter()
            .zip(g.data())
            .map(|(&c, &v)| c + v)
            .collect(),
    )?;
    let c_dr = Tensor::from_vec(
        d_c.shape(),
        conf.c_dr
            .data()
            .iter()
            .zip(g.data())
            .map(|(&c, &v)| c - v)
            .collect(),
    )?;
    Ok(ConfidencePair { c_cr, c_dr })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: Vec<f64>) -> Tensor<f64> {
        let n = v.len();
        Tensor::from_vec(&[1, 1, n], v).unwrap()
    }

    #[test]
    fn equal_confidence_is_mean() {
        let conf = ConfidencePair::new(t(vec![0.7]), t(vec![0.7])).unwrap();
        assert_eq!(
            fuse(&t(vec![10.0]), &t(vec![20.0]), &conf).unwrap().data(),
            &[15.0]
        );
    }

    #[test]
    fn saturated_confidence_selects_branch() {
        let conf = ConfidencePair::new(t(vec![100.0]), t(vec![0.0])).unwrap();
        let d = fuse(&t(vec![3.0]), &t(vec![9.0]), &conf).unwrap().data()[0];
        assert!(((d - 3.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn hand_oracle_ln3() {
        // (3 * 4 + 1 * 8) / (3 + 1)
        let conf = ConfidencePair::new(t(vec![3f64.ln()]), t(vec![0.0])).unwrap();
        let d = fuse(&t(vec![4.0]), &t(vec![8.0]), &conf).unwrap().data()[0];
        assert!((d - 5.0).abs() < 1e-12);
    }

    #[test]
    fn huge_logits_do_not_overflow_f32() {
        let c1 = Tensor::<f32>::from_vec(&[1, 1, 1], vec![500.0]).unwrap();
        let c2 = Tensor::<f32>::from_vec(&[1, 1, 1], vec![499.0]).unwrap();
        let d1 = Tensor::<f32>::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        let d2 = Tensor::<f32>::from_vec(&[1, 1, 1], vec![2.0]).unwrap();
        let out = fuse(&d1, &d2, &ConfidencePair::new(c1, c2).unwrap()).unwrap();
        assert!(out.is_finite());
    }

    #[test]
    fn nan_and_shape_mismatch_rejected() {
        let conf = ConfidencePair {
            c_cr: t(vec![f64::NAN]),
            c_dr: t(vec![0.0]),
        };
        assert!(fuse(&t(vec![1.0]), &t(vec![2.0]), &conf).is_err());
        let conf = ConfidencePair::new(t(vec![0.0, 0.0]), t(vec![0.0, 0.0])).unwrap();
        assert!(fuse(&t(vec![1.0]), &t(vec![2.0]), &conf).is_err());
    }

    #[test]
    fn constant_image_has_no_edges() {
        let d = Tensor::<f64>::full(&[1, 6, 7], 12.0);
        assert!(sobel_magnitude(&d)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step_response() {
        let (h, w, step) = (5, 8, 3.0);
        let d = Tensor::<f64>::from_fn(&[1, h, w], |i| if i % w >= 4 { step } else { 0.0 });
        let (gx, gy) = sobel_gradients(&d).unwrap();
        for y in 0..h {
            assert_eq!(gx[y * w + 3], 4.0 * step);
            assert_eq!(gx[y * w + 4], 4.0 * step);
            assert_eq!(gy[y * w + 3], 0.0);
            assert_eq!(gx[y * w + 1], 0.0);
        }
    }

    #[test]
    fn negative_alpha_rejected() {
        let d = Tensor::<f64>::full(&[1, 4, 4], 5.0);
        let conf = ConfidencePair::new(d.clone(), d.clone()).unwrap();
        let cfg = GuidanceConfig {
            alpha: -0.1,
            ..Default::default()
        };
        assert!(cgm(&d, &conf, &cfg).is_err());
    }

    #[test]
    fn zero_alpha_is_identity() {
        let d = Tensor::<f64>::from_fn(&[1, 4, 4], |i| 1.0 + i as f64);
        let conf = ConfidencePair::new(d.map(|v| v.sin()), d.map(|v| v.cos())).unwrap();
        let cfg = GuidanceConfig {
            alpha: 0.0,
            ..Default::default()
        };
        assert_eq!(cgm(&d, &conf, &cfg).unwrap(), conf);
    }
}
