//! Checks shared by the acceptance target and the regular test suites.
//! Each returns a one-line detail on success and a reason on failure.

use std::path::Path;
use std::time::Instant;

use depthfill::fusion::{fuse, ConfidencePair};
use depthfill::io::{read_depth_png, write_depth_png, SparseDepthMap};
use depthfill::loss::LossSchedule;
use depthfill::metrics::evaluate;
use depthfill::nn::{si_conv2d, ConvLayer, SI_EPSILON};
use depthfill::tensor::Tensor;
use depthfill::train::{lr_at, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grad_ops::{worst_error, INSTANCES, OPS};
use super::{metrics_oracle, rand_mask, rand_tensor, FD_MAX_REL_ERR};

pub type Outcome = std::result::Result<String, String>;

pub const SI_PAIRS_PER_KERNEL: usize = 100;
pub const SI_BUDGET_S: f64 = 5.0;
pub const GRAD_BUDGET_S: f64 = 60.0;
pub const FUSION_PIXELS: usize = 1000;
pub const FUSION_TOL: f64 = 1e-12;
pub const METRIC_FIXTURES: usize = 50;
pub const METRIC_REL_TOL: f64 = 1e-9;
pub const PNG_FIXTURES: usize = 20;
pub const PNG_MAX_QUANT_ERR_M: f64 = 1.0 / 512.0;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Perturbing values at invalid pixels leaves SI-conv output bit-identical.
pub fn si_invariance() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in [1usize, 3] {
        for pair in 0..SI_PAIRS_PER_KERNEL {
            let (c, h, w, o) = (rng.gen_range(1..=4), rng.gen_range(2..=12), rng.gen_range(2..=12), rng.gen_range(1..=4));
            let density = rng.gen_range(0.0..=1.0);
            let mask = rand_mask(&mut rng, h, w, density);
            let x = rand_tensor(&mut rng, &[c, h, w], -5.0, 5.0);
            let layer = ConvLayer::new(
                rand_tensor(&mut rng, &[o, c, k, k], -1.0, 1.0),
                rand_tensor(&mut rng, &[o], -1.0, 1.0),
                1,
            )
            .unwrap();
            let mut perturbed = x.clone();
            let plane = h * w;
            for (i, v) in perturbed.data_mut().iter_mut().enumerate() {
                if mask.data()[i % plane] == 0 {
                    *v += rng.gen_range(-1e3..1e3);
                }
            }
            let (a, ma) = si_conv2d(&x, &mask, &layer, SI_EPSILON).map_err(|e| e.to_string())?;
            let (b, mb) = si_conv2d(&perturbed, &mask, &layer, SI_EPSILON).map_err(|e| e.to_string())?;
            ensure(a.data() == b.data() && ma == mb, || {
                format!("k={k} pair {pair}: output changed by {:e}", a.max_abs_diff(&b))
            })?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < SI_BUDGET_S, || format!("took {secs:.2} s (budget {SI_BUDGET_S} s)"))?;
    Ok(format!("{} pairs per kernel size {{1,3}}, max change 0, {secs:.2} s", SI_PAIRS_PER_KERNEL))
}

/// Finite-difference agreement for every differentiable op.
pub fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    for (name, op) in OPS {
        let err = worst_error(op);
        ensure(err < FD_MAX_REL_ERR, || format!("{name}: worst relative error {err:.2e}"))?;
        parts.push(format!("{name} {err:.1e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < GRAD_BUDGET_S, || format!("took {secs:.1} s (budget {GRAD_BUDGET_S} s)"))?;
    Ok(format!("{INSTANCES} instances each, worst rel err: {}; {secs:.2} s", parts.join(", ")))
}

fn fuse1(d1: f64, d2: f64, c1: f64, c2: f64) -> f64 {
    let t = |v: f64| Tensor::from_vec(&[1, 1, 1], vec![v]).unwrap();
    fuse(&t(d1), &t(d2), &ConfidencePair::new(t(c1), t(c2)).unwrap()).unwrap().data()[0]
}

/// Convexity, shift invariance, branch-swap symmetry and the ln 3 hand value.
pub fn fusion_contracts() -> Outcome {
    let hand = fuse1(4.0, 8.0, 3f64.ln(), 0.0);
    ensure((hand - 5.0).abs() <= FUSION_TOL, || format!("fuse(ln 3, 0; 4, 8) = {hand}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let n = FUSION_PIXELS;
    let gen = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| rand_tensor(rng, &[1, 1, n], lo, hi);
    let (d1, d2) = (gen(&mut rng, 0.0, 80.0), gen(&mut rng, 0.0, 80.0));
    let (c1, c2) = (gen(&mut rng, -20.0, 20.0), gen(&mut rng, -20.0, 20.0));
    let shift: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
    let shifted = |c: &Tensor<f64>| {
        Tensor::from_vec(c.shape(), c.data().iter().zip(&shift).map(|(v, s)| v + s).collect()).unwrap()
    };
    let conf = ConfidencePair::new(c1.clone(), c2.clone()).unwrap();
    let out = fuse(&d1, &d2, &conf).unwrap();
    let swapped = fuse(&d2, &d1, &ConfidencePair::new(c2.clone(), c1.clone()).unwrap()).unwrap();
    let moved = fuse(&d1, &d2, &ConfidencePair::new(shifted(&c1), shifted(&c2)).unwrap()).unwrap();
    let mut worst_shift = 0.0f64;
    for i in 0..n {
        let (a, b, f) = (d1.data()[i], d2.data()[i], out.data()[i]);
        ensure(f >= a.min(b) && f <= a.max(b), || format!("pixel {i}: {f} outside [{a}, {b}]"))?;
        ensure(swapped.data()[i] == f, || format!("pixel {i}: swap gives {} vs {f}", swapped.data()[i]))?;
        let rel = (moved.data()[i] - f).abs() / a.abs().max(b.abs()).max(1.0);
        worst_shift = worst_shift.max(rel);
    }
    ensure(worst_shift <= FUSION_TOL, || format!("shift changed output by {worst_shift:e} (relative)"))?;
    Ok(format!("{n} pixels: convex, swap exact, shift rel err {worst_shift:.1e}, fuse(ln 3, 0; 4, 8) = {hand}"))
}

/// Coarse-loss weight and learning-rate endpoints.
pub fn schedule_endpoints() -> Outcome {
    let s = LossSchedule::default();
    let cfg = TrainConfig::default();
    let got = (s.c_first(1), s.c_first(5), lr_at(1, &cfg), lr_at(6, &cfg));
    ensure(got == (0.3, 0.0, 0.001, 0.0005), || format!("got c_first(1), c_first(5), lr(1), lr(6) = {got:?}"))?;
    Ok("C_first(1)=0.3, C_first(5)=0, lr(1)=0.001, lr(6)=0.0005".into())
}

/// `evaluate` against the scalar-loop oracle, plus the single-pixel case.
pub fn metric_oracle() -> Outcome {
    let one = |v: f64| Tensor::from_vec(&[1, 1, 1], vec![v]).unwrap();
    let r = evaluate(&one(9.0), &one(10.0)).map_err(|e| e.to_string())?;
    ensure((r.mae_mm - 1000.0).abs() < 1e-9 && (r.imae_per_km - 1000.0 / 90.0).abs() < 1e-9, || {
        format!("hand case: MAE {} mm, iMAE {} 1/km", r.mae_mm, r.imae_per_km)
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut worst = 0.0f64;
    for f in 0..METRIC_FIXTURES {
        let (h, w) = (rng.gen_range(1..=16), rng.gen_range(1..=40));
        let mut gt = rand_tensor(&mut rng, &[1, h, w], 0.5, 90.0);
        let pred = rand_tensor(&mut rng, &[1, h, w], 0.0, 95.0);
        let sparsity = rng.gen_range(0.0..0.9);
        for v in gt.data_mut() {
            if rng.gen_bool(sparsity) {
                *v = 0.0;
            }
        }
        gt.data_mut()[0] = 12.5;
        let got = evaluate(&pred, &gt).map_err(|e| e.to_string())?;
        let want = metrics_oracle(pred.data(), gt.data());
        for (a, b) in [
            (got.irmse_per_km, want.0),
            (got.imae_per_km, want.1),
            (got.rmse_mm, want.2),
            (got.mae_mm, want.3),
        ] {
            let rel = (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
            ensure(rel <= METRIC_REL_TOL, || format!("fixture {f}: {a} vs oracle {b}"))?;
        }
    }
    Ok(format!("{METRIC_FIXTURES} fixtures, worst rel err {worst:.1e}; gt 10 m / pred 9 m gives MAE 1000 mm, iMAE 11.111 1/km"))
}

/// Depth fixture `i` of the PNG round trip: random depths across the
/// representable range, both endpoints, and some invalid pixels.
pub fn png_fixture(i: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(77 + i as u64);
    let (h, w) = (rng.gen_range(1..=24), rng.gen_range(2..=48));
    let hi = 65535.0 / 256.0;
    let mut d: Vec<f32> = (0..h * w)
        .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(1.0 / 256.0..hi) as f32 })
        .collect();
    d[0] = (1.0 / 256.0) as f32;
    d[1] = hi as f32;
    Tensor::from_vec(&[1, h, w], d).unwrap()
}

/// write -> read -> write is byte-identical and quantisation stays in bound.
pub fn png_round_trip(dir: &Path) -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..PNG_FIXTURES {
        let depth = png_fixture(i);
        let map = SparseDepthMap::from_depth(depth.clone()).map_err(|e| e.to_string())?;
        let (a, b) = (dir.join(format!("a{i}.png")), dir.join(format!("b{i}.png")));
        write_depth_png(&map, &a).map_err(|e| e.to_string())?;
        let back = read_depth_png(&a).map_err(|e| e.to_string())?;
        write_depth_png(&back, &b).map_err(|e| e.to_string())?;
        let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        ensure(ba == bb, || format!("fixture {i}: second write differs"))?;
        ensure(back.mask() == map.mask(), || format!("fixture {i}: validity changed"))?;
        for (&x, &y) in depth.data().iter().zip(back.depth().data()) {
            worst = worst.max((x as f64 - y as f64).abs());
        }
        ensure(worst <= PNG_MAX_QUANT_ERR_M, || format!("fixture {i}: quantisation error {worst} m"))?;
    }
    Ok(format!("{PNG_FIXTURES} fixtures byte-identical, worst quantisation error {worst:.2e} m (bound 1/512)"))
}

/// Input densities exercised by the dense-output check.
pub const DENSITIES: [f64; 4] = [0.0, 0.01, 0.04, 1.0];

/// Every output map of every network is finite at every input density.
pub fn dense_outputs(nets: &[(String, &depthfill::network::DepthNet<f32>)], height: usize, width: usize) -> Outcome {
    use depthfill::synth::{render, sparsify, Pattern, SceneRanges, SceneSpec};
    let spec = SceneSpec::random(5, height, width, &SceneRanges::default());
    let (color, dense) = render(&spec).map_err(|e| e.to_string())?;
    let mut pixels = 0usize;
    for density in DENSITIES {
        let sparse = if density == 0.0 {
            SparseDepthMap::from_depth(Tensor::zeros(dense.shape()))
        } else {
            sparsify(&dense, density, Pattern::Uniform, 9)
        }
        .map_err(|e| e.to_string())?;
        for (name, net) in nets {
            let out = net.forward(&color, &sparse).map_err(|e| format!("{name} at {density}: {e}"))?;
            let mut maps = vec![&out.d_c, &out.d_final];
            if let Some(b) = &out.branches {
                maps.extend([&b.d_cr, &b.d_dr, &b.c_cr, &b.c_dr, &b.c_cr_adj, &b.c_dr_adj]);
            }
            for m in maps {
                let bad = m.data().iter().filter(|v| !v.is_finite()).count();
                ensure(bad == 0, || format!("{name} at density {density}: {bad} non-finite pixels"))?;
                pixels += m.len();
            }
        }
    }
    Ok(format!("{} networks x densities {{0, 1, 4, 100}}%: {pixels} output pixels, 0 NaN/Inf", nets.len()))
}
