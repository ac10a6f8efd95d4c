//! Write and read KITTI-style 16-bit depth PNGs and score a prediction.
//!
//! cargo run --example kitti_io_metrics

use depthfill::io::{read_depth_png, write_depth_png, SparseDepthMap};
use depthfill::metrics::evaluate;
use depthfill::Tensor;

fn main() -> depthfill::Result<()> {
    let dir = std::env::temp_dir().join("depthfill_kitti_io");
    let (h, w) = (4, 6);
    let gt = Tensor::from_fn(&[1, h, w], |i| if i % 4 == 0 { 0.0 } else { 2.0 + 7.3 * i as f32 });
    let path = dir.join("gt.png");
    write_depth_png(&SparseDepthMap::from_depth(gt.clone())?, &path)?;
    let back = read_depth_png(&path)?;
    println!("wrote {} ({} valid of {} pixels)", path.display(), back.mask().count(), h * w);
    println!("max quantisation error: {:.5} m (bound 1/512 = {:.5})", gt.max_abs_diff(back.depth()), 1.0 / 512.0);

    let pred = gt.map(|d| d * 1.02 + 0.1);
    let report = evaluate(&pred, back.depth())?;
    println!("\n{}", report.to_text());

    // Hand case: one pixel, gt 10 m, pred 9 m.
    let one = |v: f32| Tensor::from_vec(&[1, 1, 1], vec![v]).unwrap();
    let r = evaluate(&one(9.0), &one(10.0))?;
    println!("gt 10 m, pred 9 m: MAE {:.1} mm, iMAE {:.3} 1/km", r.mae_mm, r.imae_per_km);
    Ok(())
}
