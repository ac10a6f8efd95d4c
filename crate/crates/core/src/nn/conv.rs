//! Convolution kernels: standard, pointwise and sparsity-invariant.
//!
//! All three lower to `im2col` + GEMM. The backward routines here are shared
//! by the graph recorder in [`crate::nn::graph`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, ValidityMask};

/// Default division guard for sparsity-invariant normalization.
pub const SI_EPSILON: f64 = 1e-8;

/// How out-of-image taps are filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Padding {
    #[default]
    Zero,
    /// Clamp to the nearest border pixel.
    Replicate,
}

/// Convolution parameters. Weights are `out x in x k x k`, bias is `out`.
#[derive(Clone, Debug)]
pub struct ConvLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
    pub padding_mode: Padding,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, stride: usize) -> Result<Self> {
        let [out_c, _, kh, kw] = weight.shape()[..] else {
            return Err(Error::Shape(format!(
                "conv weight must be rank 4, got {:?}",
                weight.shape()
            )));
        };
        if kh != kw || kh % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel must be square and odd, got {kh}x{kw}"
            )));
        }
        if bias.shape() != [out_c] {
            return Err(Error::Shape(format!(
                "bias {:?} does not match {out_c} output channels",
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        Ok(Self {
            weight,
            bias,
            stride,
            padding: (kh - 1) / 2,
            padding_mode: Padding::Zero,
        })
    }

    pub fn with_padding_mode(mut self, mode: Padding) -> Self {
        self.padding_mode = mode;
        self
    }

    /// Kaiming-uniform (fan-in) weights, zero bias.
    pub fn kaiming<R: Rng>(
        out_c: usize,
        in_c: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let weight = kaiming_uniform(&[out_c, in_c, k, k], rng);
        Self::new(weight, Tensor::zeros(&[out_c]), stride).expect("valid kaiming layer")
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Kaiming-uniform with ReLU gain: `U(-b, b)`, `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<T: Scalar, R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let fan_in: usize = shape[1..].iter().product();
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..bound)))
}

/// Resolved geometry of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
    pub out_c: usize,
    pub mode: Padding,
}

impl ConvGeom {
    pub fn resolve(
        input: &[usize],
        weight: &[usize],
        stride: usize,
        pad: usize,
        mode: Padding,
    ) -> Result<Self> {
        let [c, h, w] = input[..] else {
            return Err(Error::Shape(format!(
                "conv input must be C x H x W, got {input:?}"
            )));
        };
        let [out_c, in_c, k, _] = weight[..] else {
            return Err(Error::Shape(format!(
                "conv weight must be rank 4, got {weight:?}"
            )));
        };
        if in_c != c {
            return Err(Error::Shape(format!(
                "input {input:?} has {c} channels but weight {weight:?} expects {in_c}"
            )));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::Shape(format!(
                "input {input:?} smaller than kernel {weight:?}"
            )));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Ok(Self {
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho,
            wo,
            out_c,
            mode,
        })
    }

    pub fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Source coordinate of tap `offset` for output index `o` along an axis of
    /// length `len`, or `None` when it falls in zero padding.
    #[inline]
    fn source(&self, o: usize, offset: usize, len: usize) -> Option<usize> {
        let i = (o * self.stride + offset) as isize - self.pad as isize;
        if (0..len as isize).contains(&i) {
            Some(i as usize)
        } else if self.mode == Padding::Replicate {
            Some(i.clamp(0, len as isize - 1) as usize)
        } else {
            None
        }
    }

    pub fn is_identity_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Range of output indices whose tap `offset` lands inside `0..len`.
    #[inline]
    fn interior(&self, offset: usize, len: usize, out_len: usize) -> (usize, usize) {
        // o * stride + offset - pad in [0, len)
        let lo = self.pad.saturating_sub(offset).div_ceil(self.stride);
        let hi = if len + self.pad > offset {
            (len + self.pad - offset).div_ceil(self.stride)
        } else {
            0
        };
        let hi = hi.min(out_len);
        (lo.min(hi), hi)
    }
}

/// Unfold `x` (`c x h x w`) into a `(c*k*k) x (ho*wo)` matrix.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    if g.is_identity_pointwise() {
        return x.to_vec();
    }
    let mut cols = Vec::with_capacity(g.rows() * g.positions());
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let (lo, hi) = g.interior(kx, g.w, g.wo);
                let base = if hi > lo { lo * g.stride + kx - g.pad } else { 0 };
                for oy in 0..g.ho {
                    let Some(iy) = g.source(oy, ky, g.h) else {
                        cols.resize(cols.len() + g.wo, T::zero());
                        continue;
                    };
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let edge = |ox: usize| g.source(ox, kx, g.w).map_or(T::zero(), |ix| src[ix]);
                    cols.extend((0..lo).map(edge));
                    if g.stride == 1 {
                        cols.extend_from_slice(&src[base..base + hi - lo]);
                    } else {
                        cols.extend((0..hi - lo).map(|j| src[base + j * g.stride]));
                    }
                    cols.extend((hi..g.wo).map(edge));
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back onto a `c x h x w` image.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    if g.is_identity_pointwise() {
        return cols.to_vec();
    }
    let p = g.positions();
    let mut x = vec![T::zero(); g.c * g.h * g.w];
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = g.interior(kx, g.w, g.wo);
                let base = if hi > lo { lo * g.stride + kx - g.pad } else { 0 };
                for oy in 0..g.ho {
                    let Some(iy) = g.source(oy, ky, g.h) else {
                        continue;
                    };
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let row_src = &src[oy * g.wo..(oy + 1) * g.wo];
                    if g.stride == 1 {
                        for (d, &v) in dst[base..base + hi - lo].iter_mut().zip(&row_src[lo..hi]) {
                            *d = *d + v;
                        }
                    } else {
                        for (j, &v) in row_src[lo..hi].iter().enumerate() {
                            let ix = base + j * g.stride;
                            dst[ix] = dst[ix] + v;
                        }
                    }
                    for ox in (0..lo).chain(hi..g.wo) {
                        if let Some(ix) = g.source(ox, kx, g.w) {
                            dst[ix] = dst[ix] + row_src[ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// `weight (out x rows) * cols (rows x P)`, bias not added.
pub(crate) fn weight_times_cols<T: Scalar>(weight: &[T], cols: &[T], g: &ConvGeom) -> Vec<T> {
    let (rows, p) = (g.rows(), g.positions());
    T::matmul(
        g.out_c,
        rows,
        p,
        weight,
        rows as isize,
        1,
        cols,
        p as isize,
        1,
    )
}

pub(crate) fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], p: usize) {
    for (chunk, &b) in out.chunks_mut(p).zip(bias) {
        chunk.iter_mut().for_each(|v| *v = *v + b);
    }
}

/// Gradients of `out = W * cols`: returns `(d_cols, d_weight)`.
pub(crate) fn conv_backward_gemm<T: Scalar>(
    d_out: &[T],
    cols: &[T],
    weight: &[T],
    g: &ConvGeom,
    need_dcols: bool,
) -> (Option<Vec<T>>, Vec<T>) {
    let (rows, p, o) = (g.rows(), g.positions(), g.out_c);
    // dW = dY * cols^T
    let d_weight = T::matmul(o, p, rows, d_out, p as isize, 1, cols, 1, p as isize);
    // dcols = W^T * dY
    let d_cols =
        need_dcols.then(|| T::matmul(rows, o, p, weight, 1, rows as isize, d_out, p as isize, 1));
    (d_cols, d_weight)
}

pub(crate) fn bias_grad<T: Scalar>(d_out: &[T], p: usize) -> Vec<T> {
    d_out.chunks(p).map(|c| c.iter().copied().sum()).collect()
}

pub fn conv2d<T: Scalar>(input: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    let g = ConvGeom::resolve(
        input.shape(),
        layer.weight.shape(),
        layer.stride,
        layer.padding,
        layer.padding_mode,
    )?;
    let cols = im2col(input.data(), &g);
    let mut out = weight_times_cols(layer.weight.data(), &cols, &g);
    add_bias(&mut out, layer.bias.data(), g.positions());
    Tensor::from_vec(&[g.out_c, g.ho, g.wo], out)
}

/// 1x1 convolution: a per-pixel linear map across channels.
pub fn pointwise_conv<T: Scalar>(input: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    if layer.kernel_size() != 1 {
        return Err(Error::InvalidArgument(format!(
            "pointwise_conv needs k = 1, got k = {}",
            layer.kernel_size()
        )));
    }
    conv2d(input, layer)
}

/// Cached pieces of a sparsity-invariant forward pass.
pub(crate) struct SiForward<T> {
    pub out: Vec<T>,
    pub cols: Vec<T>,
    /// `1 / (valid count + eps)` per output position.
    pub norm: Vec<T>,
    pub out_mask: ValidityMask,
}

pub(crate) fn si_forward<T: Scalar>(
    x: &[T],
    mask: &ValidityMask,
    weight: &[T],
    bias: &[T],
    g: &ConvGeom,
    eps: T,
) -> SiForward<T> {
    let plane = g.h * g.w;
    let m = mask.data();
    let masked: Vec<T> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| if m[i % plane] == 1 { v } else { T::zero() })
        .collect();
    let cols = im2col(&masked, g);

    // Valid-tap count per output position: a k x k box sum over the mask.
    let mask_geom = ConvGeom {
        c: 1,
        out_c: 1,
        ..*g
    };
    let mask_vals: Vec<T> = m
        .iter()
        .map(|&v| if v == 1 { T::one() } else { T::zero() })
        .collect();
    let mask_cols = im2col(&mask_vals, &mask_geom);
    let p = g.positions();
    let mut counts = vec![T::zero(); p];
    for row in mask_cols.chunks(p) {
        for (c, &v) in counts.iter_mut().zip(row) {
            *c = *c + v;
        }
    }
    let norm: Vec<T> = counts.iter().map(|&c| T::one() / (c + eps)).collect();
    let out_mask_data = counts.iter().map(|&c| u8::from(c > T::zero())).collect();
    let out_mask = ValidityMask::new(g.ho, g.wo, out_mask_data).expect("mask geometry");

    let mut out = weight_times_cols(weight, &cols, g);
    for (o, chunk) in out.chunks_mut(p).enumerate() {
        for (v, &n) in chunk.iter_mut().zip(&norm) {
            *v = *v * n + bias[o];
        }
    }
    SiForward {
        out,
        cols,
        norm,
        out_mask,
    }
}

/// Sparsity-invariant convolution. Each output is the weighted sum over valid
/// taps divided by the number of valid taps (plus `eps`), and the output mask
/// marks positions with at least one valid tap.
pub fn si_conv2d<T: Scalar>(
    input: &Tensor<T>,
    mask: &ValidityMask,
    layer: &ConvLayer<T>,
    eps: T,
) -> Result<(Tensor<T>, ValidityMask)> {
    let g = ConvGeom::resolve(
        input.shape(),
        layer.weight.shape(),
        layer.stride,
        layer.padding,
        Padding::Zero,
    )?;
    check_mask(mask, &g)?;
    if mask.count() == 0 {
        log::warn!("si_conv2d: mask has no valid pixels, output is bias only");
    }
    let fwd = si_forward(
        input.data(),
        mask,
        layer.weight.data(),
        layer.bias.data(),
        &g,
        eps,
    );
    Ok((
        Tensor::from_vec(&[g.out_c, g.ho, g.wo], fwd.out)?,
        fwd.out_mask,
    ))
}

pub(crate) fn check_mask(mask: &ValidityMask, g: &ConvGeom) -> Result<()> {
    if (mask.height(), mask.width()) != (g.h, g.w) {
        return Err(Error::Shape(format!(
            "mask {}x{} does not match input {}x{}",
            mask.height(),
            mask.width(),
            g.h,
            g.w
        )));
    }
    Ok(())
}
