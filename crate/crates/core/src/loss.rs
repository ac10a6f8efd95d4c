//! Masked regression losses and the two-term loss schedule.
//!
//! Ground truth is semi-dense: pixels with depth 0 carry no supervision.

use crate::error::{Error, Result};
use crate::nn::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

/// How the coarse-depth loss weight decays between the first epoch and
/// `zero_epoch`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Linear,
    /// Full weight until `zero_epoch`, then zero.
    Step,
}

impl std::str::FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "step" => Ok(Self::Step),
            other => Err(Error::Config(format!(
                "unknown interpolation {other:?} (expected linear | step)"
            ))),
        }
    }
}

impl std::fmt::Display for Interpolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Step => "step",
        })
    }
}

/// Weight of the coarse-depth loss per (1-based) epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSchedule {
    pub c_first_initial: f64,
    pub zero_epoch: usize,
    pub interpolation: Interpolation,
}

impl Default for LossSchedule {
    fn default() -> Self {
        Self {
            c_first_initial: 0.3,
            zero_epoch: 5,
            interpolation: Interpolation::Linear,
        }
    }
}

impl LossSchedule {
    pub fn c_first(&self, epoch: usize) -> f64 {
        let epoch = epoch.max(1);
        if epoch >= self.zero_epoch {
            return 0.0;
        }
        match self.interpolation {
            Interpolation::Step => self.c_first_initial,
            Interpolation::Linear => {
                let span = (self.zero_epoch - 1) as f64;
                self.c_first_initial * (self.zero_epoch - epoch) as f64 / span
            }
        }
    }
}

fn check_pair<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    Ok(())
}

/// Loss value and number of valid pixels.
pub(crate) fn masked_mse_value<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<(T, usize)> {
    check_pair(pred, gt)?;
    let mut sum = T::zero();
    let mut count = 0usize;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if g > T::zero() {
            let r = g - p;
            sum = sum + r * r;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument(
            "ground truth has no valid pixels".into(),
        ));
    }
    Ok((sum / T::lit(count as f64), count))
}

pub(crate) fn masked_mse_backward<T: Scalar>(
    seed: T,
    pred: &[T],
    gt: &[T],
    count: usize,
) -> Vec<T> {
    let scale = seed * T::lit(2.0) / T::lit(count as f64);
    pred.iter()
        .zip(gt)
        .map(|(&p, &g)| {
            if g > T::zero() {
                scale * (p - g)
            } else {
                T::zero()
            }
        })
        .collect()
}

/// Mean squared error over pixels where `gt > 0`.
pub fn masked_mse<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<T> {
    Ok(masked_mse_value(pred, gt)?.0)
}

/// `C_first(epoch) * L(d_first) + L(d_final)`, eager.
pub fn total_loss<T: Scalar>(
    d_first: &Tensor<T>,
    d_final: &Tensor<T>,
    gt: &Tensor<T>,
    epoch: usize,
    schedule: &LossSchedule,
) -> Result<T> {
    let first = masked_mse(d_first, gt)?;
    let last = masked_mse(d_final, gt)?;
    Ok(T::lit(schedule.c_first(epoch)) * first + last)
}

/// Recorded version of [`total_loss`]. When the coarse weight is zero the
/// coarse term is left out of the graph entirely.
pub fn total_loss_graph<T: Scalar>(
    graph: &mut Graph<T>,
    d_first: Var,
    d_final: Var,
    gt: &Tensor<T>,
    epoch: usize,
    schedule: &LossSchedule,
) -> Result<Var> {
    let last = graph.masked_mse(d_final, gt)?;
    let c = schedule.c_first(epoch);
    if c == 0.0 {
        return Ok(last);
    }
    let first = graph.masked_mse(d_first, gt)?;
    let weighted = graph.scale(first, T::lit(c))?;
    graph.add(weighted, last)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let s = LossSchedule::default();
        assert_eq!(s.c_first(1), 0.3);
        assert_eq!(s.c_first(5), 0.0);
        assert_eq!(s.c_first(25), 0.0);
        assert!((s.c_first(3) - 0.15).abs() < 1e-15);
        let step = LossSchedule {
            interpolation: Interpolation::Step,
            ..s
        };
        assert_eq!(step.c_first(4), 0.3);
        assert_eq!(step.c_first(5), 0.0);
    }

    #[test]
    fn schedule_non_increasing() {
        let s = LossSchedule::default();
        for e in 1..30 {
            assert!(s.c_first(e + 1) <= s.c_first(e));
        }
    }

    #[test]
    fn single_pixel() {
        assert_eq!(
            masked_mse(&map(&[3.0, 7.0]), &map(&[5.0, 0.0])).unwrap(),
            4.0
        );
        assert_eq!(
            masked_mse(&map(&[5.0, 1.0]), &map(&[5.0, 0.0])).unwrap(),
            0.0
        );
    }

    #[test]
    fn empty_ground_truth_rejected() {
        assert!(masked_mse(&map(&[1.0]), &map(&[0.0])).is_err());
        assert!(masked_mse(&map(&[1.0, 2.0]), &map(&[1.0])).is_err());
    }

    #[test]
    fn total_loss_weights() {
        let gt = map(&[5.0, 2.0]);
        let first = map(&[4.0, 2.0]); // L = 0.5
        let last = map(&[5.0, 4.0]); // L = 2
        let s = LossSchedule::default();
        assert!((total_loss(&first, &last, &gt, 1, &s).unwrap() - (0.3 * 0.5 + 2.0)).abs() < 1e-15);
        assert_eq!(total_loss(&first, &last, &gt, 5, &s).unwrap(), 2.0);
    }

    #[test]
    fn zero_weight_detaches_first() {
        let gt = map(&[5.0, 2.0]);
        let mut g = Graph::new();
        let first = g.input(map(&[4.0, 2.0]));
        let last = g.input(map(&[5.0, 4.0]));
        let loss = total_loss_graph(&mut g, first, last, &gt, 6, &LossSchedule::default()).unwrap();
        let grads = g.backward_scalar(loss).unwrap();
        assert!(grads.get(first).is_none());
        assert_eq!(grads.get(last).unwrap().data(), &[0.0, 2.0]);
    }
}
