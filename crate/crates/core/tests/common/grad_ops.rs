//! Random gradient-check instances for each differentiable op.

use super::{gradcheck, rand_mask, rand_tensor};
use depthfill::fusion::GuidanceConfig;
use depthfill::loss::{total_loss_graph, LossSchedule};
use depthfill::nn::{Graph, Padding, Var, SI_EPSILON};
use depthfill::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const OPS: [(&str, fn(u64) -> f64); 8] = [
    ("conv2d", conv2d),
    ("si_conv2d", si_conv2d),
    ("pointwise_conv", pointwise_conv),
    ("residual_block", residual_block),
    ("fuse", fuse),
    ("cgm", cgm),
    ("masked_mse", masked_mse),
    ("total_loss", total_loss),
];

/// Worst relative error of `op` over all instances.
pub fn worst_error(op: fn(u64) -> f64) -> f64 {
    (0..INSTANCES).map(op).fold(0.0, f64::max)
}

/// Random instances per op.
pub const INSTANCES: u64 = 20;

fn worst(
    seed: u64,
    inputs: Vec<Tensor<f64>>,
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Var,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let out_shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).shape().to_vec()
    };
    let seed_t = rand_tensor(&mut rng, &out_shape, -1.0, 1.0);
    gradcheck(&inputs, &seed_t, build)
}

fn dims(rng: &mut impl Rng) -> (usize, usize, usize) {
    (
        rng.gen_range(1..=3),
        rng.gen_range(3..=6),
        rng.gen_range(3..=7),
    )
}

fn conv2d(i: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(i);
    let (c, h, w) = dims(&mut rng);
    let o = rng.gen_range(1..=3);
    let k = [1, 3, 5][rng.gen_range(0..3)];
    let stride = rng.gen_range(1..=2);
    let padding = if rng.gen_bool(0.5) {
        Padding::Zero
    } else {
        Padding::Replicate
    };
    let inputs = vec![
        rand_tensor(&mut rng, &[c, h, w], -2.0, 2.0),
        rand_tensor(&mut rng, &[o, c, k, k], -1.0, 1.0),
        rand_tensor(&mut rng, &[o], -1.0, 1.0),
    ];
    worst(i, inputs, |g, v| {
        g.conv2d(v[0], v[1], v[2], stride, padding).unwrap()
    })
}

fn pointwise_conv(i: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(100 + i);
    let (c, h, w) = dims(&mut rng);
    let o = rng.gen_range(1..=4);
    let inputs = vec![
        rand_tensor(&mut rng, &[c, h, w], -2.0, 2.0),
        rand_tensor(&mut rng, &[o, c, 1, 1], -1.0, 1.0),
        rand_tensor(&mut rng, &[o], -1.0, 1.0),
    ];
    worst(i, inputs, |g, v| {
        g.conv2d(v[0], v[1], v[2], 1, Padding::Zero).unwrap()
    })
}

fn si_conv2d(i: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(200 + i);
    let (c, h, w) = dims(&mut rng);
    let o = rng.gen_range(1..=3);
    let k = [1, 3][rng.gen_range(0..2)];
    let density = rng.gen_range(0.2..0.9);
    let mask = rand_mask(&mut rng, h, w, density);
    let inputs = vec![
        rand_tensor(&mut rng, &[c, h, w], -2.0, 2.0),
        rand_tensor(&mut rng, &[o, c, k, k], -1.0, 1.0),
        rand_tensor(&mut rng, &[o], -1.0, 1.0),
    ];
    worst(i, inputs, |g, v| {
        g.si_conv2d(v[0], &mask, v[1], v[2], 1, SI_EPSILON)
            .unwrap()
            .0
    })
}

fn residual_block(i: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(300 + i);
    let (c, h, w) = dims(&mut rng);
    let inputs = vec![
        rand_tensor(&mut rng, &[c, h, w], -2.0, 2.0),
        rand_tensor(&mut rng, &[c, c, 3, 3], -1.0, 1.0),
        rand_tensor(&mut rng, &[c], -0.5, 0.5),
        rand_tensor(&mut rng, &[c, c, 3, 3], -1.0, 1.0),
        rand_tensor(&mut rng, &[c], -0.5, 0.5),
    ];
    worst(i, inputs, |g, v| {
        let a = g.conv2d(v[0], v[1], v[2], 1, Padding::Zero).unwrap();
        let a = g.relu(a).unwrap();
        let b = g.conv2d(a, v[3], v[4], 1, Padding::Zero).unwrap();
        g.add(v[0], b).unwrap()
    })
}

fn fuse(i: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(400 + i);
    let (_, h, w) = dims(&mut rng);
    let shape = [1, h, w];
    let inputs = vec![
        rand_tensor(&mut rng, &shape, 0.0, 80.0),
        rand_tensor(&mut rng, &shape, 0.0, 80.0),
        rand_tensor(&mut rng, &shape, -3.0, 3.0),
        rand_tensor(&mut rng, &shape, -3.0, 3.0),
    ];
    worst(i, inputs, |g, v| g.fuse(v[0], v[1], v[2], v[3]).unwrap())
}

fn cgm(i: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(500 + i);
    let (_, h, w) = dims(&mut rng);
    let shape = [1, h, w];
    let cfg = GuidanceConfig {
        alpha: rng.gen_range(0.5..2.0),
        d_max: 60.0,
        percentile: 0.9,
    };
    let inputs = vec![
        rand_tensor(&mut rng, &shape, 1.0, 75.0),
        rand_tensor(&mut rng, &shape, -3.0, 3.0),
        rand_tensor(&mut rng, &shape, -3.0, 3.0),
    ];
    worst(i, inputs, |g, v| {
        let (a, b) = g.cgm(v[0], v[1], v[2], &cfg).unwrap();
        g.concat(&[a, b]).unwrap()
    })
}

fn sparse_gt(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let mut gt = rand_tensor(rng, shape, 1.0, 80.0);
    for v in gt.data_mut() {
        if rng.gen_bool(0.4) {
            *v = 0.0;
        }
    }
    gt.data_mut()[0] = 5.0;
    gt
}

fn masked_mse(i: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(600 + i);
    let (_, h, w) = dims(&mut rng);
    let gt = sparse_gt(&mut rng, &[1, h, w]);
    let inputs = vec![rand_tensor(&mut rng, &[1, h, w], 0.0, 80.0)];
    worst(i, inputs, |g, v| g.masked_mse(v[0], &gt).unwrap())
}

fn total_loss(i: u64) -> f64 {
    let schedule = LossSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(700 + i);
    let (_, h, w) = dims(&mut rng);
    let gt = sparse_gt(&mut rng, &[1, h, w]);
    let epoch = rng.gen_range(1..=6);
    let inputs = vec![
        rand_tensor(&mut rng, &[1, h, w], 0.0, 80.0),
        rand_tensor(&mut rng, &[1, h, w], 0.0, 80.0),
    ];
    worst(i, inputs, |g, v| {
        total_loss_graph(g, v[0], v[1], &gt, epoch, &schedule).unwrap()
    })
}
