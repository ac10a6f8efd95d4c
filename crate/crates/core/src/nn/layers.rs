//! Eager (non-recording) building blocks on top of the convolution kernels.

use crate::error::{Error, Result};
use crate::nn::conv::{conv2d, ConvLayer};
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "add: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    Tensor::from_vec(a.shape(), data)
}

/// Two 3x3 convolutions with a ReLU between them, plus the identity path.
#[derive(Clone, Debug)]
pub struct ResidualParams<T> {
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
}

/// `input + conv2(relu(conv1(input)))`.
pub fn residual_block<T: Scalar>(
    input: &Tensor<T>,
    params: &ResidualParams<T>,
) -> Result<Tensor<T>> {
    let (c, _, _) = input.chw()?;
    if params.conv1.in_channels() != c || params.conv2.out_channels() != c {
        return Err(Error::Shape(format!(
            "residual block maps {} -> {} channels but input has {c}",
            params.conv1.in_channels(),
            params.conv2.out_channels()
        )));
    }
    let hidden = relu(&conv2d(input, &params.conv1)?);
    add(input, &conv2d(&hidden, &params.conv2)?)
}

pub(crate) fn check_even(shape: &[usize]) -> Result<()> {
    let n = shape.len();
    if n < 2 || shape[n - 1] % 2 != 0 || shape[n - 2] % 2 != 0 {
        return Err(Error::Shape(format!(
            "downsampling needs even height and width, got {shape:?}"
        )));
    }
    Ok(())
}

/// Stride-2 convolution halving height and width.
pub fn downsample2x<T: Scalar>(input: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    check_even(input.shape())?;
    if layer.stride != 2 {
        return Err(Error::InvalidArgument(format!(
            "downsample layer must have stride 2, got {}",
            layer.stride
        )));
    }
    conv2d(input, layer)
}

/// Nearest-neighbour doubling of every spatial axis.
pub fn upsample_nearest2x<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.chw()?;
    let (h2, w2) = (2 * h, 2 * w);
    let src = input.data();
    let mut out = vec![T::zero(); c * h2 * w2];
    for ch in 0..c {
        for y in 0..h2 {
            let row = &src[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
            let dst = &mut out[(ch * h2 + y) * w2..(ch * h2 + y + 1) * w2];
            for (x, v) in dst.iter_mut().enumerate() {
                *v = row[x / 2];
            }
        }
    }
    Tensor::from_vec(&[c, h2, w2], out)
}

/// Adjoint of [`upsample_nearest2x`]: sums each 2x2 block.
pub(crate) fn upsample_nearest2x_backward<T: Scalar>(
    grad: &[T],
    c: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    let w2 = 2 * w;
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..2 * h {
            let src = &grad[(ch * 2 * h + y) * w2..(ch * 2 * h + y + 1) * w2];
            let dst = &mut out[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
            for (x, &g) in src.iter().enumerate() {
                dst[x / 2] = dst[x / 2] + g;
            }
        }
    }
    out
}

/// Nearest-neighbour x2 followed by a stride-1 convolution.
pub fn upsample2x<T: Scalar>(input: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    if layer.stride != 1 {
        return Err(Error::InvalidArgument(format!(
            "upsample layer must have stride 1, got {}",
            layer.stride
        )));
    }
    conv2d(&upsample_nearest2x(input)?, layer)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::conv::Padding;

    fn zero_residual(c: usize) -> ResidualParams<f64> {
        let z = || ConvLayer::new(Tensor::zeros(&[c, c, 3, 3]), Tensor::zeros(&[c]), 1).unwrap();
        ResidualParams {
            conv1: z(),
            conv2: z(),
        }
    }

    #[test]
    fn zero_residual_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Tensor<f64> = Tensor::from_fn(&[3, 6, 5], |_| rng.gen_range(-2.0..2.0));
        assert_eq!(residual_block(&x, &zero_residual(3)).unwrap(), x);
        assert!(residual_block(&x, &zero_residual(2)).is_err());
    }

    #[test]
    fn constant_image_stays_constant_through_downsample() {
        let x = Tensor::full(&[1, 4, 4], 3.0f64);
        let layer = ConvLayer::new(
            Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0),
            Tensor::zeros(&[1]),
            2,
        )
        .unwrap()
        .with_padding_mode(Padding::Replicate);
        let y = downsample2x(&x, &layer).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert!(y.data().iter().all(|&v| (v - 3.0).abs() < 1e-14));
    }

    #[test]
    fn shape_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let down = ConvLayer::<f64>::kaiming(4, 2, 3, 2, &mut rng);
        let up = ConvLayer::<f64>::kaiming(2, 4, 3, 1, &mut rng);
        let x = Tensor::from_fn(&[2, 8, 16], |_| rng.gen_range(-1.0..1.0));
        let d = downsample2x(&x, &down).unwrap();
        assert_eq!(d.shape(), &[4, 4, 8]);
        assert_eq!(upsample2x(&d, &up).unwrap().shape(), &[2, 8, 16]);
        assert!(downsample2x(&Tensor::<f64>::zeros(&[2, 7, 16]), &down).is_err());
    }

    #[test]
    fn nearest_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Tensor<f64> = Tensor::from_fn(&[2, 3, 4], |_| rng.gen_range(-1.0..1.0));
        let g: Vec<f64> = (0..2 * 6 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lhs: f64 = upsample_nearest2x(&x)
            .unwrap()
            .data()
            .iter()
            .zip(&g)
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = x
            .data()
            .iter()
            .zip(upsample_nearest2x_backward(&g, 2, 3, 4))
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
