//! Sparsity-invariant convolution on a mostly empty depth map: the output
//! ignores whatever sits under invalid pixels and the validity mask dilates.
//!
//! cargo run --example sparse_conv

use depthfill::nn::{conv2d, si_conv2d, ConvLayer, SI_EPSILON};
use depthfill::{Tensor, ValidityMask};

fn show(name: &str, t: &Tensor<f64>) {
    println!("{name}:");
    let (_, h, w) = t.chw().unwrap();
    for y in 0..h {
        let row: Vec<String> = (0..w).map(|x| format!("{:6.2}", t.at(0, y, x))).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> depthfill::Result<()> {
    let (h, w) = (5, 7);
    // Three LiDAR returns; the rest is garbage that a plain conv would smear.
    let mut depth = Tensor::from_fn(&[1, h, w], |i| 100.0 + i as f64);
    let mut valid = vec![0u8; h * w];
    for (y, x, d) in [(1, 1, 10.0), (2, 4, 20.0), (4, 6, 30.0)] {
        valid[y * w + x] = 1;
        depth.data_mut()[y * w + x] = d;
    }
    let mask = ValidityMask::new(h, w, valid)?;

    let box3 = ConvLayer::new(Tensor::full(&[1, 1, 3, 3], 1.0), Tensor::zeros(&[1]), 1)?;
    let (si, out_mask) = si_conv2d(&depth, &mask, &box3, SI_EPSILON)?;
    show("sparsity-invariant 3x3 mean", &si);
    println!("valid pixels: {} -> {}", mask.count(), out_mask.count());

    // Same input with the zero-valued pixels scrambled: SI output is unchanged.
    for (i, v) in depth.data_mut().iter_mut().enumerate() {
        if mask.data()[i] == 0 {
            *v = -(i as f64);
        }
    }
    let (again, _) = si_conv2d(&depth, &mask, &box3, SI_EPSILON)?;
    println!("max change after scrambling invalid pixels: {}", si.max_abs_diff(&again));
    show("plain 3x3 sum on the scrambled input", &conv2d(&depth, &box3)?);
    Ok(())
}
