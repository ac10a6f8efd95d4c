use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::loss::LossSchedule;
use crate::network::{NetworkConfig, Variant};
use crate::synth::AugmentConfig;
use crate::train::adam::AdamConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub lr_initial: f64,
    pub lr_halving_period: usize,
    pub schedule: LossSchedule,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// Global-norm gradient clipping; `None` disables it.
    pub clip_norm: Option<f64>,
    /// Process batch items strictly one after another.
    pub deterministic: bool,
    pub network: NetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 25,
            adam: AdamConfig::default(),
            lr_initial: 1e-3,
            lr_halving_period: 5,
            schedule: LossSchedule::default(),
            augment: AugmentConfig::default(),
            seed: 0,
            clip_norm: Some(10.0),
            deterministic: false,
            network: NetworkConfig::default(),
        }
    }
}

impl TrainConfig {
    /// CPU-sized run: batch 4 and the narrow desk network.
    pub fn desk(variant: Variant) -> Self {
        Self {
            batch_size: 4,
            network: NetworkConfig::desk(variant),
            ..Self::default()
        }
    }

    pub fn variant(&self) -> Variant {
        self.network.variant
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.network.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.lr_halving_period == 0 {
            return Err(Error::Config(
                "batch_size, epochs and lr_halving_period must be positive".into(),
            ));
        }
        if !(self.lr_initial > 0.0) {
            return Err(Error::Config(format!(
                "lr_initial must be positive, got {}",
                self.lr_initial
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!(
                    "clip_norm must be positive, got {c}"
                )));
            }
        }
        if !(self.schedule.c_first_initial >= 0.0) || self.schedule.zero_epoch < 2 {
            return Err(Error::Config(
                "loss schedule needs c_first_initial >= 0 and zero epoch >= 2".into(),
            ));
        }
        self.adam.validate()?;
        self.augment.validate()?;
        self.network.validate()
    }

    pub const KEYS: [&'static str; 16] = [
        "batch_size",
        "epochs",
        "beta1",
        "beta2",
        "adam_eps",
        "weight_decay",
        "lr_initial",
        "lr_halving_period",
        "c_first_initial",
        "c_first_zero_epoch",
        "c_first_interpolation",
        "jitter",
        "flip_probability",
        "seed",
        "clip_norm",
        "deterministic",
    ];

    /// Every key accepted by [`TrainConfig::from_kv`].
    pub fn all_keys() -> Vec<&'static str> {
        Self::KEYS
            .iter()
            .chain(NetworkConfig::KEYS.iter())
            .copied()
            .collect()
    }

    /// Flat `key = value` form; `clip_norm = 0` means no clipping.
    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("batch_size", self.batch_size);
        kv.set("epochs", self.epochs);
        kv.set("beta1", self.adam.beta1);
        kv.set("beta2", self.adam.beta2);
        kv.set("adam_eps", self.adam.eps);
        kv.set("weight_decay", self.adam.weight_decay);
        kv.set("lr_initial", self.lr_initial);
        kv.set("lr_halving_period", self.lr_halving_period);
        kv.set("c_first_initial", self.schedule.c_first_initial);
        kv.set("c_first_zero_epoch", self.schedule.zero_epoch);
        kv.set("c_first_interpolation", self.schedule.interpolation);
        kv.set("jitter", self.augment.jitter);
        kv.set("flip_probability", self.augment.flip_probability);
        kv.set("seed", self.seed);
        kv.set("clip_norm", self.clip_norm.unwrap_or(0.0));
        kv.set("deterministic", self.deterministic);
        self.network.write_kv(&mut kv, "");
        kv
    }

    /// Keys present in `kv` override `base`; unknown keys are rejected.
    pub fn from_kv(kv: &KvMap, base: &Self) -> Result<Self> {
        kv.check_known(&Self::all_keys())?;
        let clip: f64 = kv.parse_or("clip_norm", base.clip_norm.unwrap_or(0.0))?;
        let cfg = Self {
            batch_size: kv.parse_or("batch_size", base.batch_size)?,
            epochs: kv.parse_or("epochs", base.epochs)?,
            adam: AdamConfig {
                beta1: kv.parse_or("beta1", base.adam.beta1)?,
                beta2: kv.parse_or("beta2", base.adam.beta2)?,
                eps: kv.parse_or("adam_eps", base.adam.eps)?,
                weight_decay: kv.parse_or("weight_decay", base.adam.weight_decay)?,
            },
            lr_initial: kv.parse_or("lr_initial", base.lr_initial)?,
            lr_halving_period: kv.parse_or("lr_halving_period", base.lr_halving_period)?,
            schedule: LossSchedule {
                c_first_initial: kv.parse_or("c_first_initial", base.schedule.c_first_initial)?,
                zero_epoch: kv.parse_or("c_first_zero_epoch", base.schedule.zero_epoch)?,
                interpolation: kv.parse_or("c_first_interpolation", base.schedule.interpolation)?,
            },
            augment: AugmentConfig {
                jitter: kv.parse_or("jitter", base.augment.jitter)?,
                flip_probability: kv.parse_or("flip_probability", base.augment.flip_probability)?,
            },
            seed: kv.parse_or("seed", base.seed)?,
            clip_norm: (clip > 0.0).then_some(clip),
            deterministic: kv.parse_or("deterministic", base.deterministic)?,
            network: NetworkConfig::read_kv(kv, "", &base.network)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Learning rate for a 1-based epoch: halved every `lr_halving_period` epochs.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let halvings = (epoch.max(1) - 1) / cfg.lr_halving_period;
    cfg.lr_initial * 0.5f64.powi(halvings as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_recipe() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size, c.epochs), (8, 25));
        assert_eq!(
            (c.adam.beta1, c.adam.beta2, c.adam.eps, c.adam.weight_decay),
            (0.9, 0.99, 1e-8, 1e-6)
        );
        assert_eq!(c.lr_initial, 0.001);
        assert_eq!(TrainConfig::desk(Variant::Baseline).batch_size, 4);
    }

    #[test]
    fn lr_schedule_closed_form() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(1, &c), 0.001);
        assert_eq!(lr_at(5, &c), 0.001);
        assert_eq!(lr_at(6, &c), 0.0005);
        assert_eq!(lr_at(25, &c), 6.25e-5);
        for e in 1..=25 {
            assert_eq!(lr_at(e, &c), 0.001 * 0.5f64.powi(((e - 1) / 5) as i32));
        }
    }

    #[test]
    fn kv_round_trip_and_unknown_keys() {
        let mut c = TrainConfig::desk(Variant::CrDr);
        c.clip_norm = None;
        c.seed = 17;
        let back = TrainConfig::from_kv(&c.to_kv(), &TrainConfig::default()).unwrap();
        assert_eq!(back, c);
        let bad = KvMap::parse("batch_sise = 3").unwrap();
        let msg = TrainConfig::from_kv(&bad, &c).unwrap_err().to_string();
        assert!(msg.contains("batch_sise") && msg.contains("batch_size"));
    }
}
