//! Confidence-weighted fusion of two depth branches and the guidance module
//! that shifts trust towards the colour branch at edges and far away.
//!
//! cargo run --example confidence_fusion

use depthfill::fusion::{cgm, fuse, priors, ConfidencePair, GuidanceConfig};
use depthfill::Tensor;

fn row(v: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(&[1, 1, v.len()], v.to_vec()).unwrap()
}

fn main() -> depthfill::Result<()> {
    // Colour logit ln 3 vs 0: weights 3/4 and 1/4.
    let conf = ConfidencePair::new(row(&[3f64.ln()]), row(&[0.0]))?;
    let d = fuse(&row(&[4.0]), &row(&[8.0]), &conf)?;
    println!("fuse(ln 3, 0; 4 m, 8 m) = {} m", d.data()[0]);

    // A coarse depth map with a step from 10 m to 60 m.
    let (h, w) = (6, 12);
    let d_c = Tensor::from_fn(&[1, h, w], |i| if i % w < 6 { 10.0 } else { 60.0 });
    let cfg = GuidanceConfig::default();
    let p = priors(&d_c, &cfg)?;
    let zeros = Tensor::<f64>::zeros(&[1, h, w]);
    let adjusted = cgm(&d_c, &ConfidencePair::new(zeros.clone(), zeros)?, &cfg)?;
    println!("\n   x  boundary  farness  colour weight after guidance");
    for x in 0..w {
        let (a, b) = (adjusted.c_cr.at(0, 2, x), adjusted.c_dr.at(0, 2, x));
        let weight = 1.0 / (1.0 + (b - a).exp());
        println!("{x:>4}  {:>8.3}  {:>7.3}  {weight:.3}", p.boundary.at(0, 2, x), p.farness.at(0, 2, x));
    }
    Ok(())
}
