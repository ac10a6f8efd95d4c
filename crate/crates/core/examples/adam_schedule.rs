//! ADAM with decoupled weight decay, gradient clipping and the step-halving
//! learning-rate schedule, minimising a small least-squares problem.
//!
//! cargo run --example adam_schedule

use depthfill::network::OptimizerState;
use depthfill::nn::ParamStore;
use depthfill::train::{adam_step, clip_global_norm, lr_at, AdamConfig, TrainConfig};
use depthfill::Tensor;

fn main() -> depthfill::Result<()> {
    let target = [3.0, -1.5, 0.25];
    let mut params = ParamStore::<f64>::new();
    let id = params.add("w", Tensor::zeros(&[3]))?;
    let mut state = OptimizerState::zeros(&params);
    let cfg = TrainConfig { lr_initial: 0.1, lr_halving_period: 20, ..TrainConfig::default() };
    let adam = AdamConfig::default();

    for epoch in 1..=100 {
        let w = params.get(id).data().to_vec();
        let loss: f64 = w.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum();
        let mut grads = vec![Tensor::from_vec(&[3], w.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect())?];
        let norm = clip_global_norm(&mut grads, 10.0);
        adam_step(&mut params, &grads, &mut state, &adam, lr_at(epoch, &cfg))?;
        if epoch % 20 == 1 {
            println!("epoch {epoch:>3}  lr {:.4}  grad norm {norm:7.3}  loss {loss:.6}", lr_at(epoch, &cfg));
        }
    }
    println!("w = {:?} (target {target:?})", params.get(id).data());
    Ok(())
}
