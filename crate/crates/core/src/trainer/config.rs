use serde::{Deserialize, Serialize};

use crate::data::AugmentPolicy;
use crate::error::{Error, Result};
use crate::loss::{DomainLossMode, LossConfig, DEFAULT_DICE_SMOOTHING, DEFAULT_EPS_CLAMP};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Training hyperparameters. Serializes to TOML; missing keys take their
/// defaults and unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    /// Share of each batch drawn from labelled datasets.
    pub labelled_fraction: f64,
    pub epochs: usize,
    pub seed: u64,
    pub domain_loss_mode: DomainLossMode,
    pub eps_clamp: f64,
    pub dice_smoothing: f64,
    #[serde(with = "policy_text")]
    pub augment: AugmentPolicy,
    /// Share of every dataset held out for per-epoch evaluation.
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            labelled_fraction: 0.5,
            epochs: 10,
            seed: 0,
            domain_loss_mode: DomainLossMode::Literal,
            eps_clamp: DEFAULT_EPS_CLAMP,
            dice_smoothing: DEFAULT_DICE_SMOOTHING,
            augment: AugmentPolicy::standard(),
            holdout_fraction: 0.1,
        }
    }
}

mod policy_text {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::data::AugmentPolicy;

    pub fn serialize<S: Serializer>(p: &AugmentPolicy, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&p.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<AugmentPolicy, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0 && self.lambda1.is_finite() && self.lambda2.is_finite()) {
            return bad(format!("lambda1 {} and lambda2 {} must be non-negative", self.lambda1, self.lambda2));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.labelled_fraction > 0.0 && self.labelled_fraction <= 1.0) {
            return bad(format!("labelled_fraction {} outside (0, 1]", self.labelled_fraction));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad(format!("adam betas ({}, {}) outside [0, 1)", self.beta1, self.beta2));
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps {} must be positive", self.adam_eps));
        }
        if !(self.eps_clamp > 0.0 && self.eps_clamp < 1.0) {
            return bad(format!("eps_clamp {} outside (0, 1)", self.eps_clamp));
        }
        if !(self.dice_smoothing >= 0.0) {
            return bad(format!("dice_smoothing {} must be non-negative", self.dice_smoothing));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad(format!("holdout_fraction {} outside (0, 1)", self.holdout_fraction));
        }
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed {} exceeds {}", self.seed, i64::MAX));
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            mode: self.domain_loss_mode,
            eps_clamp: self.eps_clamp,
            dice_smoothing: self.dice_smoothing,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
