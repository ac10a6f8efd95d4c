//! KITTI depth-completion metrics: RMSE/MAE in millimetres and iRMSE/iMAE of
//! inverse depth in 1/km, evaluated on pixels with valid ground truth.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Predictions are clamped to this depth (metres) before inversion.
pub const MIN_INVERSE_DEPTH_M: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct MetricReport {
    pub irmse_per_km: f64,
    pub imae_per_km: f64,
    pub rmse_mm: f64,
    pub mae_mm: f64,
    pub valid_pixel_count: usize,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "irmse,imae,rmse,mae";

    /// Per-image average (KITTI leaderboard convention).
    pub fn mean(reports: &[MetricReport]) -> Result<MetricReport> {
        if reports.is_empty() {
            return Err(Error::InvalidArgument("no reports to average".into()));
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Ok(MetricReport {
            irmse_per_km: avg(|r| r.irmse_per_km),
            imae_per_km: avg(|r| r.imae_per_km),
            rmse_mm: avg(|r| r.rmse_mm),
            mae_mm: avg(|r| r.mae_mm),
            valid_pixel_count: reports.iter().map(|r| r.valid_pixel_count).sum(),
        })
    }

    /// One CSV row in the order iRMSE, iMAE, RMSE, MAE.
    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6}",
            self.irmse_per_km, self.imae_per_km, self.rmse_mm, self.mae_mm
        )
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "irmse_per_km = {:.6}", self.irmse_per_km);
        let _ = writeln!(s, "imae_per_km = {:.6}", self.imae_per_km);
        let _ = writeln!(s, "rmse_mm = {:.6}", self.rmse_mm);
        let _ = writeln!(s, "mae_mm = {:.6}", self.mae_mm);
        let _ = writeln!(s, "valid_pixel_count = {}", self.valid_pixel_count);
        s
    }
}

/// Metrics of one predicted depth map (metres) against semi-dense ground
/// truth (metres, 0 = invalid).
pub fn evaluate<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<MetricReport> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let (mut se, mut ae, mut ise, mut iae) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut n = 0usize;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (p.as_f64(), g.as_f64());
        if g <= 0.0 {
            continue;
        }
        if !p.is_finite() {
            return Err(Error::NonFinite("prediction contains NaN or Inf".into()));
        }
        let r = (p - g) * 1000.0;
        se += r * r;
        ae += r.abs();
        let ir = 1000.0 / p.max(MIN_INVERSE_DEPTH_M) - 1000.0 / g;
        ise += ir * ir;
        iae += ir.abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "ground truth has no valid pixels".into(),
        ));
    }
    let nf = n as f64;
    Ok(MetricReport {
        irmse_per_km: (ise / nf).sqrt(),
        imae_per_km: iae / nf,
        rmse_mm: (se / nf).sqrt(),
        mae_mm: ae / nf,
        valid_pixel_count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let gt = map(&[1.0, 0.0, 30.0]);
        let r = evaluate(&map(&[1.0, 5.0, 30.0]), &gt).unwrap();
        assert_eq!(
            (r.rmse_mm, r.mae_mm, r.irmse_per_km, r.imae_per_km),
            (0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!(r.valid_pixel_count, 2);
    }

    #[test]
    fn single_pixel_hand_case() {
        let r = evaluate(&map(&[9.0]), &map(&[10.0])).unwrap();
        assert!((r.mae_mm - 1000.0).abs() < 1e-9);
        assert!((r.rmse_mm - 1000.0).abs() < 1e-9);
        assert!((r.imae_per_km - (1000.0 / 9.0 - 100.0)).abs() < 1e-9);
        assert!((r.imae_per_km - 11.111).abs() < 1e-3);
    }

    #[test]
    fn empty_rejected() {
        assert!(evaluate(&map(&[1.0]), &map(&[0.0])).is_err());
    }

    #[test]
    fn zero_prediction_is_clamped() {
        let r = evaluate(&map(&[0.0]), &map(&[1.0])).unwrap();
        assert!((r.imae_per_km - (1e6 - 1000.0)).abs() < 1e-6);
    }

    #[test]
    fn csv_column_order() {
        let r = MetricReport {
            irmse_per_km: 1.0,
            imae_per_km: 2.0,
            rmse_mm: 3.0,
            mae_mm: 4.0,
            valid_pixel_count: 1,
        };
        assert_eq!(r.csv_row(), "1.000000,2.000000,3.000000,4.000000");
        assert!(r.to_text().starts_with("irmse_per_km = 1.000000\n"));
    }
}
