//! Training loop, checkpointing and determinism on a tiny configuration.

mod common;

use depthfill::dataset::Dataset;
use depthfill::network::{load_checkpoint, save_checkpoint, DepthNet, Variant, MANIFEST_FILE, PAYLOAD_FILE};
use depthfill::synth::{generate_dataset, SynthConfig};
use depthfill::train::{history_csv, train, train_with, Status, TrainConfig};

fn tiny_data() -> Dataset {
    generate_dataset(&SynthConfig { scenes: 10, height: 16, width: 32, seed: 3, ..SynthConfig::default() }).unwrap()
}

fn tiny_config(variant: Variant, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::desk(variant);
    cfg.network.base_width = 2;
    cfg.network.sffm_width = 2;
    cfg.epochs = epochs;
    cfg.deterministic = true;
    cfg
}

#[test]
fn every_variant_trains_without_nan() {
    let data = tiny_data();
    for v in Variant::ALL {
        let out = train(&data.train, &data.val, &tiny_config(v, 2)).unwrap();
        assert_eq!(out.status, Status::Converged, "{v}");
        assert_eq!(out.history.len(), 2);
        assert!(out.history.iter().all(|r| r.train_loss.is_finite() && r.val.rmse_mm.is_finite()), "{v}");
    }
}

#[test]
fn identical_seeds_give_identical_logs() {
    let data = tiny_data();
    let cfg = tiny_config(Variant::Full, 3);
    let a = train(&data.train, &data.val, &cfg).unwrap();
    let b = train(&data.train, &data.val, &cfg).unwrap();
    assert_eq!(a.log_csv(), b.log_csv());
    assert_eq!(a.last.net.params, b.last.net.params);

    let mut other = cfg.clone();
    other.seed = 1;
    let c = train(&data.train, &data.val, &other).unwrap();
    assert_ne!(a.log_csv(), c.log_csv(), "seed must matter");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let data = tiny_data();
    let out = train(&data.train, &data.val, &tiny_config(Variant::Full, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    save_checkpoint(&a, &out.last).unwrap();
    let back = load_checkpoint(&a).unwrap();
    assert_eq!(back.net.params, out.last.net.params);
    assert_eq!(back.net.config(), out.last.net.config());
    assert_eq!(back.optimizer, out.last.optimizer);
    assert_eq!(back.meta, out.last.meta);
    save_checkpoint(&b, &back).unwrap();
    for f in [MANIFEST_FILE, PAYLOAD_FILE] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let net = DepthNet::<f32>::new(tiny_config(Variant::CrDr, 1).network).unwrap();
    let ck = depthfill::network::Checkpoint { net, optimizer: None, meta: Default::default() };
    save_checkpoint(dir.path(), &ck).unwrap();
    let payload = dir.path().join(PAYLOAD_FILE);
    let bytes = std::fs::read(&payload).unwrap();
    std::fs::write(&payload, &bytes[..bytes.len() - 4]).unwrap();
    assert!(load_checkpoint(dir.path()).is_err());
    std::fs::remove_file(&payload).unwrap();
    assert!(load_checkpoint(dir.path()).is_err());
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let data = tiny_data();
    let cfg = tiny_config(Variant::Full, 6);
    let full = train(&data.train, &data.val, &cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut first = cfg.clone();
    first.epochs = 3;
    train_with(&data.train, &data.val, &first, None, |_, ck| save_checkpoint(dir.path(), ck)).unwrap();
    let ck = load_checkpoint(dir.path()).unwrap();
    assert_eq!(ck.meta.get("epoch"), Some("3"));
    let resumed = train_with(&data.train, &data.val, &cfg, Some(ck), |_, _| Ok(())).unwrap();

    assert_eq!(history_csv(&resumed.history), history_csv(&full.history[3..]));
    assert_eq!(resumed.last.net.params, full.last.net.params);
}

#[test]
fn untrained_networks_are_finite_at_all_densities() {
    let nets: Vec<DepthNet<f32>> =
        Variant::ALL.iter().map(|&v| DepthNet::new(tiny_config(v, 1).network).unwrap()).collect();
    let named: Vec<(String, &DepthNet<f32>)> = nets.iter().map(|n| (n.variant().to_string(), n)).collect();
    if let Err(e) = common::criteria::dense_outputs(&named, 16, 32) {
        panic!("{e}");
    }
}

#[test]
fn mismatched_resume_config_is_rejected() {
    let data = tiny_data();
    let out = train(&data.train, &data.val, &tiny_config(Variant::CrDr, 1)).unwrap();
    let err = train_with(&data.train, &data.val, &tiny_config(Variant::Full, 2), Some(out.last), |_, _| Ok(()));
    assert!(err.is_err());
}
