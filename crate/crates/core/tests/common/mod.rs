//! Shared oracles for the integration tests.
#![allow(dead_code)]

pub mod criteria;
pub mod grad_ops;

use depthfill::nn::{Graph, Var};
use depthfill::tensor::{Tensor, ValidityMask};
use rand::Rng;

/// Central-difference step for 64-bit gradient checks.
pub const FD_STEP: f64 = 1e-5;
/// Maximum allowed relative error between analytic and numeric gradients.
pub const FD_MAX_REL_ERR: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely (relative error is
/// meaningless near zero, where the finite-difference noise floor is ~1e-11).
pub const FD_ABS_FLOOR: f64 = 1e-4;

pub fn rand_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn rand_mask(rng: &mut impl Rng, h: usize, w: usize, density: f64) -> ValidityMask {
    ValidityMask::new(
        h,
        w,
        (0..h * w)
            .map(|_| u8::from(rng.gen_bool(density)))
            .collect(),
    )
    .unwrap()
}

/// Relative error with an absolute floor on the denominator.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_ABS_FLOOR)
}

/// Check the gradient of `sum(seed * f(inputs))` with respect to every
/// element of every input. `build` records `f` on a fresh graph from the
/// input variables. Returns the worst relative error.
pub fn gradcheck(
    inputs: &[Tensor<f64>],
    seed: &Tensor<f64>,
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Var,
) -> f64 {
    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out)
            .data()
            .iter()
            .zip(seed.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let out = build(&mut g, &vars);
    assert_eq!(g.value(out).shape(), seed.shape(), "seed shape");
    let grads = g.backward(out, seed).unwrap();
    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.shape()));
        for j in 0..x.len() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[j] = x.data()[j] + FD_STEP;
            let up = eval(&xs);
            xs[i].data_mut()[j] = x.data()[j] - FD_STEP;
            let down = eval(&xs);
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

/// Direct nested-loop convolution with zero padding `(k-1)/2`.
pub fn conv_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    stride: usize,
) -> Tensor<f64> {
    let (c, h, wd) = x.chw().unwrap();
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let pad = (k - 1) / 2;
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; o * ho * wo];
    for oc in 0..o {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = b.data()[oc];
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            acc += w.data()[((oc * c + ic) * k + ky) * k + kx]
                                * x.at(ic, iy as usize, ix as usize);
                        }
                    }
                }
                out[(oc * ho + oy) * wo + ox] = acc;
            }
        }
    }
    Tensor::from_vec(&[o, ho, wo], out).unwrap()
}

/// Nested-loop sparsity-invariant convolution (stride 1).
pub fn si_conv_oracle(
    x: &Tensor<f64>,
    mask: &ValidityMask,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    eps: f64,
) -> Tensor<f64> {
    let (c, h, wd) = x.chw().unwrap();
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let pad = (k - 1) as isize / 2;
    let mut out = vec![0.0; o * h * wd];
    for oc in 0..o {
        for y in 0..h {
            for xx in 0..wd {
                let (mut acc, mut count) = (0.0, 0.0);
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = y as isize + ky as isize - pad;
                        let ix = xx as isize + kx as isize - pad;
                        if iy < 0
                            || ix < 0
                            || iy >= h as isize
                            || ix >= wd as isize
                            || !mask.is_valid(iy as usize, ix as usize)
                        {
                            continue;
                        }
                        count += 1.0;
                        for ic in 0..c {
                            acc += w.data()[((oc * c + ic) * k + ky) * k + kx]
                                * x.at(ic, iy as usize, ix as usize);
                        }
                    }
                }
                out[(oc * h + y) * wd + xx] = acc / (count + eps) + b.data()[oc];
            }
        }
    }
    Tensor::from_vec(&[o, h, wd], out).unwrap()
}

/// Scalar-loop KITTI metrics: `(irmse 1/km, imae 1/km, rmse mm, mae mm)`.
pub fn metrics_oracle(pred: &[f64], gt: &[f64]) -> (f64, f64, f64, f64) {
    let (mut se, mut ae, mut ise, mut iae, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt) {
        if g <= 0.0 {
            continue;
        }
        let e = (p - g) * 1000.0;
        se += e * e;
        ae += e.abs();
        let ie = (1.0 / p.max(1e-3) - 1.0 / g) * 1000.0;
        ise += ie * ie;
        iae += ie.abs();
        n += 1.0;
    }
    ((ise / n).sqrt(), iae / n, (se / n).sqrt(), ae / n)
}
