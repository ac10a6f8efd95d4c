//! Train all four variants on the same data and tabulate validation and
//! test metrics. Defaults to a quick setting; pass `--desk` for the full
//! 200-scene, 25-epoch comparison (about half an hour on one core).
//!
//! cargo run --release --example ablation [-- --desk]

use depthfill::network::Variant;
use depthfill::synth::{generate_dataset, SynthConfig};
use depthfill::train::{run_ablation, TrainConfig};

fn main() -> depthfill::Result<()> {
    let desk = std::env::args().any(|a| a == "--desk");
    let synth = if desk { SynthConfig::default() } else { SynthConfig { scenes: 40, height: 32, width: 128, ..SynthConfig::default() } };
    let mut cfg = TrainConfig::desk(Variant::Baseline);
    if !desk {
        cfg.epochs = 6;
    }
    let data = generate_dataset(&synth)?;
    let table = run_ablation(&data, &cfg, &Variant::ALL)?;
    println!("{}", table.to_text());
    print!("{}", table.to_csv());
    if let Some(gain) = table.full_vs_baseline() {
        println!("\nfull vs baseline: {:.2}% lower validation RMSE", 100.0 * gain);
    }
    Ok(())
}
