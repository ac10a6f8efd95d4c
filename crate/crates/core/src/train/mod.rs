//! Mini-batch training with per-item graphs, ADAM and a per-epoch validation
//! pass that keeps the best-RMSE weights.

pub mod ablation;
pub mod adam;
pub mod config;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::loss::total_loss_graph;
use crate::metrics::{evaluate, MetricReport};
use crate::network::{Checkpoint, DepthNet, Mode, OptimizerState};
use crate::nn::Graph;
use crate::synth::{augment, derive_seed};
use crate::tensor::Tensor;

pub use ablation::{run_ablation, AblationRow, AblationTable};
pub use adam::{adam_step, clip_global_norm, AdamConfig};
pub use config::{lr_at, TrainConfig};

const SALT_SHUFFLE: u64 = 0x5348;
const SALT_AUGMENT: u64 = 0x4147;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub c_first: f64,
    pub train_loss: f64,
    pub val: MetricReport,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str =
        "epoch,lr,c_first,train_loss,val_irmse,val_imae,val_rmse,val_mae";

    /// Floats are written in shortest round-trip form, so equal values give
    /// equal bytes.
    pub fn csv_row(&self) -> String {
        let v = &self.val;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.lr,
            self.c_first,
            self.train_loss,
            v.irmse_per_km,
            v.imae_per_km,
            v.rmse_mm,
            v.mae_mm
        )
    }
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from(EpochRecord::CSV_HEADER);
    s.push('\n');
    for r in history {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub enum Status {
    Converged,
    Diverged { epoch: usize, reason: String },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights with the lowest validation RMSE seen.
    pub best: Checkpoint,
    pub best_epoch: usize,
    /// State after the last completed epoch (the last good one on divergence).
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub status: Status,
}

impl TrainOutcome {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }

    pub fn log_csv(&self) -> String {
        history_csv(&self.history)
    }
}

/// Final depth clamped to `[0, d_max]`.
pub fn predict(net: &DepthNet<f32>, sample: &Sample) -> Result<Tensor<f32>> {
    let d_max = net.config().guidance.d_max as f32;
    let out = net.forward(&sample.color, &sample.sparse)?;
    Ok(out
        .d_final
        .map(|d| if d.is_nan() { d } else { d.clamp(0.0, d_max) }))
}

/// Per-image-averaged metrics of `net` on `samples`. Parameters are only read.
pub fn validate(net: &DepthNet<f32>, samples: &[Sample]) -> Result<MetricReport> {
    let reports = samples
        .par_iter()
        .map(|s| evaluate(&predict(net, s)?, s.gt.depth()))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::mean(&reports)
}

/// Loss of one sample and its gradient for every parameter, in store order.
pub fn item_gradients(
    net: &DepthNet<f32>,
    sample: &Sample,
    epoch: usize,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Tensor<f32>>)> {
    let mut g = Graph::new();
    let fv = net.record(&mut g, &sample.color, &sample.sparse, Mode::Train)?;
    let loss = total_loss_graph(
        &mut g,
        fv.d_c,
        fv.d_final,
        sample.gt.depth(),
        epoch,
        &cfg.schedule,
    )?;
    let value = g.value(loss).data()[0] as f64;
    let grads = g.backward_scalar(loss)?;
    let mut dense: Vec<Tensor<f32>> = net
        .params
        .iter()
        .map(|(_, _, t)| Tensor::zeros(t.shape()))
        .collect();
    for (id, gt) in grads.into_params() {
        let slot = dense[id.index()].data_mut();
        for (a, b) in slot.iter_mut().zip(gt.data()) {
            *a += *b;
        }
    }
    Ok((value, dense))
}

fn checkpoint(
    net: &DepthNet<f32>,
    opt: &OptimizerState,
    epoch: usize,
    extra: &[(&str, String)],
) -> Checkpoint {
    let mut meta = KvMap::new();
    meta.set("epoch", epoch);
    for (k, v) in extra {
        meta.set(*k, v);
    }
    Checkpoint {
        net: net.clone(),
        optimizer: Some(opt.clone()),
        meta,
    }
}

/// Train from scratch.
pub fn train(train_set: &[Sample], val_set: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(train_set, val_set, cfg, None, |_, _| Ok(()))
}

/// Train, optionally resuming from `start` (its `meta.epoch` epochs are
/// treated as done), calling `on_epoch` after every completed epoch with the
/// record and the state at that point.
pub fn train_with(
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    start: Option<Checkpoint>,
    mut on_epoch: impl FnMut(&EpochRecord, &Checkpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data(format!(
            "training needs non-empty train and val splits (got {} and {})",
            train_set.len(),
            val_set.len()
        )));
    }
    let (mut net, mut opt, first_epoch) = match start {
        None => {
            let net = DepthNet::<f32>::new(cfg.network.clone())?;
            let opt = OptimizerState::zeros(&net.params);
            (net, opt, 1)
        }
        Some(ck) => {
            if ck.net.config() != &cfg.network {
                return Err(Error::Checkpoint(
                    "checkpoint network config differs from the training config".into(),
                ));
            }
            let done: usize = ck.meta.require("epoch")?;
            let opt = ck
                .optimizer
                .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
            (ck.net, opt, done + 1)
        }
    };
    for s in train_set.iter().chain(val_set) {
        net.check_input_size(s.height(), s.width())?;
    }

    let mut history = Vec::new();
    let mut last = checkpoint(&net, &opt, first_epoch - 1, &[]);
    let mut best: Option<(Checkpoint, usize, f64)> = None;
    let mut status = Status::Converged;

    for epoch in first_epoch..=cfg.epochs {
        match run_epoch(&mut net, &mut opt, train_set, cfg, epoch) {
            Ok(train_loss) => {
                let val = validate(&net, val_set)?;
                let record = EpochRecord {
                    epoch,
                    lr: lr_at(epoch, cfg),
                    c_first: cfg.schedule.c_first(epoch),
                    train_loss,
                    val,
                };
                if !val.rmse_mm.is_finite() {
                    status = Status::Diverged {
                        epoch,
                        reason: format!("validation RMSE is {}", val.rmse_mm),
                    };
                    break;
                }
                log::info!(
                    "[{}] epoch {epoch:>2}  lr {:.2e}  c_first {:.3}  loss {:.4}  val rmse {:.1} mm  mae {:.1} mm",
                    cfg.variant(),
                    record.lr,
                    record.c_first,
                    train_loss,
                    val.rmse_mm,
                    val.mae_mm
                );
                last = checkpoint(
                    &net,
                    &opt,
                    epoch,
                    &[("val_rmse_mm", val.rmse_mm.to_string())],
                );
                if best.as_ref().is_none_or(|b| val.rmse_mm < b.2) {
                    best = Some((last.clone(), epoch, val.rmse_mm));
                }
                history.push(record);
                on_epoch(&record, &last)?;
            }
            Err(Error::NonFinite(reason)) => {
                log::warn!("[{}] diverged at epoch {epoch}: {reason}", cfg.variant());
                status = Status::Diverged { epoch, reason };
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let (best, best_epoch) = match best {
        Some((ck, e, _)) => (ck, e),
        None => (last.clone(), first_epoch - 1),
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        last,
        history,
        status,
    })
}

/// One pass over a shuffled, augmented training split. Returns the mean
/// batch loss. Non-finite losses or gradients surface as `Error::NonFinite`.
fn run_epoch(
    net: &mut DepthNet<f32>,
    opt: &mut OptimizerState,
    data: &[Sample],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.seed,
        epoch as u64,
        SALT_SHUFFLE,
    )));
    let aug_base = derive_seed(cfg.seed, epoch as u64, SALT_AUGMENT);
    let lr = lr_at(epoch, cfg);
    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let frozen: &DepthNet<f32> = net;
        let job = |(k, &i): (usize, &usize)| -> Result<(f64, Vec<Tensor<f32>>)> {
            let s = &data[i];
            let seed = derive_seed(aug_base, (b * cfg.batch_size + k) as u64, 0);
            let (color, sparse, gt) = augment(&s.color, &s.sparse, &s.gt, &cfg.augment, seed)?;
            item_gradients(frozen, &Sample { color, sparse, gt }, epoch, cfg)
        };
        let items: Vec<(f64, Vec<Tensor<f32>>)> = if cfg.deterministic {
            chunk.iter().enumerate().map(job).collect::<Result<_>>()?
        } else {
            chunk
                .par_iter()
                .enumerate()
                .map(job)
                .collect::<Result<_>>()?
        };
        let n = items.len() as f32;
        let mut it = items.into_iter();
        let (mut loss, mut grads) = it.next().expect("non-empty batch");
        for (l, g) in it {
            loss += l;
            for (acc, t) in grads.iter_mut().zip(&g) {
                for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                    *a += *b;
                }
            }
        }
        let loss = loss / n as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("batch {b} loss is {loss}")));
        }
        grads
            .iter_mut()
            .for_each(|g| g.data_mut().iter_mut().for_each(|v| *v /= n));
        if let Some(max) = cfg.clip_norm {
            clip_global_norm(&mut grads, max);
        }
        adam_step(&mut net.params, &grads, opt, &cfg.adam, lr)?;
        loss_sum += loss;
        batches += 1;
    }
    Ok(loss_sum / batches as f64)
}
