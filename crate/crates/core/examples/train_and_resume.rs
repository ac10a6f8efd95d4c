//! Train a small network, checkpoint it mid-way, resume, and confirm the
//! resumed run matches an uninterrupted one.
//!
//! cargo run --release --example train_and_resume

use depthfill::network::{load_checkpoint, save_checkpoint, Variant};
use depthfill::synth::{generate_dataset, SynthConfig};
use depthfill::train::{history_csv, train, train_with, TrainConfig, EpochRecord};

fn main() -> depthfill::Result<()> {
    let data = generate_dataset(&SynthConfig { scenes: 24, height: 32, width: 64, ..SynthConfig::default() })?;
    let mut cfg = TrainConfig::desk(Variant::Full);
    cfg.epochs = 6;
    cfg.deterministic = true;

    let straight = train(&data.train, &data.val, &cfg)?;
    print!("{}", straight.log_csv());

    let dir = std::env::temp_dir().join("depthfill_resume");
    let mut half = cfg.clone();
    half.epochs = 3;
    train_with(&data.train, &data.val, &half, None, |_, ck| save_checkpoint(&dir, ck))?;
    let ck = load_checkpoint(&dir)?;
    println!("\nresuming from {} after epoch {}", dir.display(), ck.meta.get("epoch").unwrap_or("?"));
    let resumed = train_with(&data.train, &data.val, &cfg, Some(ck), |rec: &EpochRecord, _| {
        println!("  epoch {} loss {:.4}", rec.epoch, rec.train_loss);
        Ok(())
    })?;
    let same = history_csv(&resumed.history) == history_csv(&straight.history[3..]);
    println!("resumed epochs identical to the uninterrupted run: {same}");
    Ok(())
}
