//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs the full desk-scale ablation (four variants, 25 epochs on 200
//! synthetic scenes), so expect roughly half an hour on one core.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::criteria::{self, Outcome};
use depthfill::network::{DepthNet, Variant};
use depthfill::synth::{generate_dataset, SynthConfig};
use depthfill::train::{run_ablation, train, AblationTable, TrainConfig};

/// Full must beat the baseline's validation RMSE by at least this fraction.
const MIN_RELATIVE_GAIN: f64 = 0.02;
const ABLATION_BUDGET_S: f64 = 45.0 * 60.0;
/// Epochs of each determinism run.
const DETERMINISM_EPOCHS: usize = 5;

fn ablation(table: &AblationTable, seconds: f64) -> Outcome {
    let rmse = |v: Variant| table.row(v).map(|r| r.val.rmse_mm).ok_or(format!("no row for {v}"));
    let (b, full) = (rmse(Variant::Baseline)?, rmse(Variant::Full)?);
    let gain = (b - full) / b;
    let order: Vec<String> = Variant::ALL.iter().map(|&v| format!("{v} {:.1}", rmse(v).unwrap())).collect();
    let monotone = Variant::ALL.windows(2).all(|w| rmse(w[0]).unwrap() >= rmse(w[1]).unwrap());
    let detail = format!(
        "val RMSE mm: {}; full vs B {:.2}% lower; intermediate ordering {}; {:.0} s",
        order.join(", "),
        100.0 * gain,
        if monotone { "monotone" } else { "not monotone (reported only)" },
        seconds
    );
    if full < b && gain >= MIN_RELATIVE_GAIN && seconds < ABLATION_BUDGET_S {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn determinism(data: &depthfill::dataset::Dataset) -> Outcome {
    let mut cfg = TrainConfig::desk(Variant::Full);
    cfg.epochs = DETERMINISM_EPOCHS;
    cfg.deterministic = true;
    let a = train(&data.train, &data.val, &cfg).map_err(|e| e.to_string())?.log_csv();
    let b = train(&data.train, &data.val, &cfg).map_err(|e| e.to_string())?.log_csv();
    if a.as_bytes() == b.as_bytes() {
        Ok(format!("two {DETERMINISM_EPOCHS}-epoch runs of {}: epoch-loss CSVs byte-identical ({} bytes)", Variant::Full, a.len()))
    } else {
        Err("epoch-loss CSVs differ".into())
    }
}

fn main() -> ExitCode {
    let synth = SynthConfig::default();
    let data = generate_dataset(&synth).expect("synthetic data");
    let tmp = tempfile::tempdir().expect("temp dir");

    let mut base = TrainConfig::desk(Variant::Baseline);
    base.deterministic = true;
    let start = Instant::now();
    let table = run_ablation(&data, &base, &Variant::ALL);
    let ablation_s = start.elapsed().as_secs_f64();

    let untrained: Vec<DepthNet<f32>> =
        Variant::ALL.iter().map(|&v| DepthNet::new(TrainConfig::desk(v).network).unwrap()).collect();
    let dense = |table: &AblationTable| {
        let mut nets: Vec<(String, &DepthNet<f32>)> =
            untrained.iter().map(|n| (format!("untrained {}", n.variant()), n)).collect();
        nets.extend(table.rows.iter().map(|r| (format!("trained {}", r.variant), &r.outcome.best.net)));
        criteria::dense_outputs(&nets, synth.height, synth.width)
    };

    let results: Vec<(&str, Outcome)> = vec![
        ("SI-conv invariance", criteria::si_invariance()),
        ("gradient verification", criteria::gradient_checks()),
        ("fusion contracts", criteria::fusion_contracts()),
        ("loss and lr schedule endpoints", criteria::schedule_endpoints()),
        ("desk-scale ablation direction", table.as_ref().map_err(|e| e.to_string()).and_then(|t| ablation(t, ablation_s))),
        ("metric oracle equivalence", criteria::metric_oracle()),
        ("KITTI PNG round trip", criteria::png_round_trip(tmp.path())),
        ("determinism", determinism(&data)),
        ("end-to-end dense output", table.as_ref().map_err(|e| e.to_string()).and_then(dense)),
    ];

    if let Ok(t) = &table {
        println!("{}", t.to_text());
    }
    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(reason) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({reason})", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
