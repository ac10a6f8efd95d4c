//! Four-variant ablation: the same data, seed and schedule for each variant.

use std::fmt::Write as _;

use crate::dataset::Dataset;
use crate::error::Result;
use crate::metrics::MetricReport;
use crate::network::Variant;
use crate::train::{train_with, validate, Status, TrainConfig, TrainOutcome};

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: Variant,
    pub num_params: usize,
    /// Validation metrics of the best-RMSE checkpoint.
    pub val: MetricReport,
    /// Test-split metrics of the same checkpoint, when a test split exists.
    pub test: Option<MetricReport>,
    pub best_epoch: usize,
    pub status: Status,
    pub seconds: f64,
    pub outcome: TrainOutcome,
}

#[derive(Clone, Debug)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// `variant,params,irmse,imae,rmse,mae,best_epoch,status` on the val split.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "variant,params,{},best_epoch,status\n",
            MetricReport::CSV_HEADER
        );
        for r in &self.rows {
            let status = match &r.status {
                Status::Converged => "converged".to_string(),
                Status::Diverged { epoch, .. } => format!("diverged@{epoch}"),
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{status}",
                r.variant,
                r.num_params,
                r.val.csv_row(),
                r.best_epoch
            );
        }
        s
    }

    /// Fixed-width table in iRMSE, iMAE, RMSE, MAE column order.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<15} {:>9} {:>9} {:>9} {:>10} {:>10}  {}\n",
            "variant", "params", "iRMSE", "iMAE", "RMSE", "MAE", "split"
        );
        for r in &self.rows {
            let mut line = |m: &MetricReport, split: &str| {
                let _ = writeln!(
                    s,
                    "{:<15} {:>9} {:>9.3} {:>9.3} {:>10.2} {:>10.2}  {split}",
                    r.variant.tag(),
                    r.num_params,
                    m.irmse_per_km,
                    m.imae_per_km,
                    m.rmse_mm,
                    m.mae_mm
                );
            };
            line(&r.val, "val");
            if let Some(t) = &r.test {
                line(t, "test");
            }
            if let Status::Diverged { epoch, reason } = &r.status {
                let _ = writeln!(s, "{:<15} diverged at epoch {epoch}: {reason}", "");
            }
        }
        s
    }

    /// Relative val-RMSE reduction of the full model against the baseline.
    pub fn full_vs_baseline(&self) -> Option<f64> {
        let b = self.row(Variant::Baseline)?.val.rmse_mm;
        let f = self.row(Variant::Full)?.val.rmse_mm;
        Some((b - f) / b)
    }
}

/// Train every variant in `variants` with `base` (variant field overridden).
/// Diverged variants stay in the table with their status.
pub fn run_ablation(
    data: &Dataset,
    base: &TrainConfig,
    variants: &[Variant],
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let cfg = base.clone().with_variant(variant);
        let t0 = std::time::Instant::now();
        let outcome = train_with(&data.train, &data.val, &cfg, None, |_, _| Ok(()))?;
        let seconds = t0.elapsed().as_secs_f64();
        let net = &outcome.best.net;
        let val = validate(net, &data.val)?;
        let test = if data.test.is_empty() {
            None
        } else {
            Some(validate(net, &data.test)?)
        };
        log::info!(
            "[{variant}] val RMSE {:.1} mm after {:.0} s",
            val.rmse_mm,
            seconds
        );
        rows.push(AblationRow {
            variant,
            num_params: net.num_params(),
            val,
            test,
            best_epoch: outcome.best_epoch,
            status: outcome.status.clone(),
            seconds,
            outcome,
        });
    }
    Ok(AblationTable { rows })
}
