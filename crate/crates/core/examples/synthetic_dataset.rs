//! Render a small synthetic dataset, write it in the KITTI directory layout
//! and read it back.
//!
//! cargo run --example synthetic_dataset [out_dir]

use depthfill::dataset::Split;
use depthfill::io::{read_split, write_dataset};
use depthfill::synth::{generate_dataset, Pattern, SynthConfig};

fn main() -> depthfill::Result<()> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("depthfill_synth"));
    let cfg = SynthConfig { scenes: 12, sparse_pattern: Pattern::Scanline, seed: 42, ..SynthConfig::default() };
    let data = generate_dataset(&cfg)?;
    write_dataset(&out, &data)?;
    println!("{} scenes of {}x{} written to {}", data.len(), cfg.height, cfg.width, out.display());
    for split in Split::ALL {
        let samples = read_split(&out, split)?;
        let density: f64 = samples.iter().map(|s| s.sparse.density()).sum::<f64>() / samples.len().max(1) as f64;
        let gt: f64 = samples.iter().map(|s| s.gt.density()).sum::<f64>() / samples.len().max(1) as f64;
        println!("{:>5}: {:>2} samples, sparse density {:.3}, ground-truth density {:.3}", split.as_str(), samples.len(), density, gt);
    }
    Ok(())
}
