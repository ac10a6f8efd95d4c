//! Record a small network on the tape, backpropagate, and compare against
//! central finite differences.
//!
//! cargo run --example gradient_check

use depthfill::nn::{Graph, Padding};
use depthfill::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss(x: &Tensor<f64>, w1: &Tensor<f64>, w2: &Tensor<f64>, gt: &Tensor<f64>) -> (f64, Vec<Tensor<f64>>) {
    let mut g = Graph::new();
    let (xv, w1v, w2v) = (g.input(x.clone()), g.input(w1.clone()), g.input(w2.clone()));
    let b1 = g.constant(Tensor::zeros(&[4]));
    let b2 = g.constant(Tensor::zeros(&[1]));
    let h = g.conv2d(xv, w1v, b1, 1, Padding::Zero).unwrap();
    let h = g.relu(h).unwrap();
    let y = g.conv2d(h, w2v, b2, 1, Padding::Replicate).unwrap();
    let l = g.masked_mse(y, gt).unwrap();
    let value = g.value(l).data()[0];
    let grads = g.backward_scalar(l).unwrap();
    (value, [xv, w1v, w2v].iter().map(|&v| grads.get(v).unwrap().clone()).collect())
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut rand = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let x = rand(&[2, 6, 8]);
    let w1 = rand(&[4, 2, 3, 3]);
    let w2 = rand(&[1, 4, 3, 3]);
    let gt = Tensor::from_fn(&[1, 6, 8], |i| if i % 3 == 0 { 0.0 } else { 1.0 + (i % 5) as f64 });

    let (value, grads) = loss(&x, &w1, &w2, &gt);
    println!("loss = {value:.6}");
    let h = 1e-5;
    for (name, which) in [("input", 0), ("conv1 weight", 1), ("conv2 weight", 2)] {
        let mut worst = 0.0f64;
        for j in 0..grads[which].len() {
            let mut args = [x.clone(), w1.clone(), w2.clone()];
            args[which].data_mut()[j] += h;
            let up = loss(&args[0], &args[1], &args[2], &gt).0;
            args[which].data_mut()[j] -= 2.0 * h;
            let down = loss(&args[0], &args[1], &args[2], &gt).0;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[which].data()[j];
            worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-4));
        }
        println!("{name:>13}: {} entries, worst relative error {worst:.2e}", grads[which].len());
    }
}
