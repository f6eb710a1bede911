//! Training configuration, parsed from JSON with defaults filled in.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::AdamWConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One quantized gradient step per stage.
    #[default]
    Theory,
    /// Many AdamW steps per stage, no quantization.
    Experiment,
}

/// How the planted logit value `K_n` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnMode {
    /// `ceil(n^(eps/16))`.
    Theory,
    Fixed(u32),
}

impl Default for KnMode {
    fn default() -> Self {
        KnMode::Fixed(16)
    }
}

/// Step size of the theory-mode update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EtaRule {
    /// `K_n n_t^2 / (2c)`.
    #[default]
    Theory,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub steps_per_stage: usize,
    pub lr: f64,
    pub batch: usize,
    pub eval_every: usize,
    pub eval_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let adam = AdamWConfig::default();
        Self {
            steps_per_stage: 500,
            lr: adam.lr,
            batch: 500,
            eval_every: 25,
            eval_size: 2000,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            weight_decay: adam.weight_decay,
        }
    }
}

impl ExperimentConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub n: usize,
    /// Defaults to the largest power of two not above `n / 2`.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Theory-mode batch per stage; defaults to `ceil(n^(2 + eps))`.
    #[serde(default, rename = "B", alias = "batch_size")]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub kn_mode: KnMode,
    #[serde(default)]
    pub eta_rule: EtaRule,
    #[serde(default)]
    pub oracle_eps: f64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub seed: u64,
    /// Samples in the final test batch.
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    /// Fixed 1-based secret set; sampled from the seed when absent.
    #[serde(default)]
    pub secret: Option<Vec<usize>>,
}

fn default_eps() -> f64 {
    0.5
}

fn default_test_size() -> usize {
    2000
}

impl TrainConfig {
    /// Defaults for input length `n`, everything else unset.
    pub fn new(n: usize) -> Self {
        Self {
            n,
            k: None,
            eps: default_eps(),
            batch_size: None,
            kn_mode: KnMode::default(),
            eta_rule: EtaRule::default(),
            oracle_eps: 0.0,
            mode: Mode::default(),
            experiment: ExperimentConfig::default(),
            seed: 0,
            test_size: default_test_size(),
            secret: None,
        }
        .resolved()
    }

    pub fn k(&self) -> usize {
        self.k.unwrap_or_else(|| default_k(self.n))
    }

    pub fn batch(&self) -> usize {
        self.batch_size.unwrap_or_else(|| default_batch(self.n, self.eps))
    }

    pub fn kn(&self) -> u32 {
        match self.kn_mode {
            KnMode::Fixed(v) => v,
            KnMode::Theory => (self.n as f64).powf(self.eps / 16.0).ceil() as u32,
        }
    }

    /// Fills every defaulted field with its concrete value.
    pub fn resolved(mut self) -> Self {
        self.k = Some(self.k());
        self.batch_size = Some(self.batch());
        self
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if self.n < 2 {
            return Err(Error::config("n", "must be at least 2"));
        }
        if k < 2 || !k.is_power_of_two() {
            return Err(Error::config("k", format!("{k} is not a power of two >= 2")));
        }
        if k > self.n {
            return Err(Error::config("k", format!("{k} exceeds n = {}", self.n)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config("eps", "must be positive and finite"));
        }
        if self.batch() == 0 {
            return Err(Error::config("B", "must be at least 1"));
        }
        if let KnMode::Fixed(0) = self.kn_mode {
            return Err(Error::config("kn_mode", "fixed value must be positive"));
        }
        if let EtaRule::Constant(eta) = self.eta_rule {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::config("eta_rule", "constant must be positive"));
            }
        }
        if !(self.oracle_eps >= 0.0 && self.oracle_eps.is_finite()) {
            return Err(Error::config("oracle_eps", "must be nonnegative"));
        }
        if self.test_size == 0 {
            return Err(Error::config("test_size", "must be at least 1"));
        }
        if let Some(secret) = &self.secret {
            if secret.len() != k {
                return Err(Error::config(
                    "secret",
                    format!("has {} indices, k = {k}", secret.len()),
                ));
            }
            if secret.iter().any(|&j| j == 0 || j > self.n) {
                return Err(Error::config("secret", format!("indices must lie in 1..={}", self.n)));
            }
        }
        let e = &self.experiment;
        let positive = [
            ("experiment.steps_per_stage", e.steps_per_stage),
            ("experiment.batch", e.batch),
            ("experiment.eval_every", e.eval_every),
            ("experiment.eval_size", e.eval_size),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if !(e.lr > 0.0 && e.lr.is_finite()) {
            return Err(Error::config("experiment.lr", "must be positive"));
        }
        for (field, b) in [("experiment.beta1", e.beta1), ("experiment.beta2", e.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, "must lie in [0, 1)"));
            }
        }
        if e.adam_eps.is_nan() || e.adam_eps <= 0.0 {
            return Err(Error::config("experiment.adam_eps", "must be positive"));
        }
        if e.weight_decay.is_nan() || e.weight_decay < 0.0 {
            return Err(Error::config("experiment.weight_decay", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Largest power of two not above `n / 2`, at least 2.
pub fn default_k(n: usize) -> usize {
    let half = (n / 2).max(2);
    1 << (usize::BITS - 1 - half.leading_zeros())
}

/// `ceil(n^(2 + eps))`.
pub fn default_batch(n: usize, eps: f64) -> usize {
    (n as f64).powf(2.0 + eps).ceil() as usize
}

/// Oracle accuracy `n^(-2 - eps/8)`.
pub fn theory_oracle_eps(n: usize, eps: f64) -> f64 {
    (n as f64).powf(-2.0 - eps / 8.0)
}

pub fn parse_config_str(text: &str) -> Result<TrainConfig> {
    let cfg: TrainConfig = serde_json::from_str(text)?;
    cfg.validate()?;
    Ok(cfg.resolved())
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    parse_config_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_defaults() {
        let cfg = parse_config_str(r#"{"n": 30, "k": 16, "mode": "experiment"}"#).unwrap();
        assert_eq!(cfg.mode, Mode::Experiment);
        assert_eq!(cfg.experiment.lr, 0.1);
        assert_eq!(cfg.experiment.batch, 500);
        assert_eq!(cfg.experiment.steps_per_stage, 500);
        assert_eq!(cfg.experiment.eval_every, 25);
        assert_eq!(cfg.kn(), 16);
        assert_eq!(cfg.k().trailing_zeros(), 4);
    }

    #[test]
    fn theory_batch_default() {
        let cfg = parse_config_str(r#"{"eps": 0.5, "n": 32}"#).unwrap();
        assert_eq!(cfg.batch(), 5793);
        assert_eq!(cfg.batch_size, Some(5793));
        assert_eq!(cfg.k(), 16);
        assert_eq!(cfg.mode, Mode::Theory);
    }

    #[test]
    fn rejects_bad_configs() {
        let err = parse_config_str(r#"{"n": 30, "k": 12}"#).unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "k"), "{err}");
        let err = parse_config_str(r#"{"n": 30, "eps": 0}"#).unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "eps"), "{err}");
        assert!(parse_config_str(r#"{"n": 30, "bogus": 1}"#).is_err());
        assert!(parse_config_str(r#"{"n": 30, "experiment": {"lr": 0.1, "momentum": 0.9}}"#).is_err());
        assert!(parse_config_str(r#"{"k": 16}"#).is_err());
    }

    #[test]
    fn kn_modes_and_aliases() {
        let cfg = parse_config_str(r#"{"n": 32, "k": 8, "kn_mode": "theory", "batch_size": 100}"#).unwrap();
        assert_eq!(cfg.kn(), 2);
        assert_eq!(cfg.batch(), 100);
        let cfg = parse_config_str(r#"{"n": 32, "k": 8, "kn_mode": {"fixed": 9}, "B": 7}"#).unwrap();
        assert_eq!(cfg.kn(), 9);
        assert_eq!(cfg.batch(), 7);
        let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn default_k_rule() {
        assert_eq!(default_k(30), 8);
        assert_eq!(default_k(32), 16);
        assert_eq!(default_k(4), 2);
        assert_eq!(default_k(2), 2);
    }

    #[test]
    fn oracle_accuracy() {
        let e = theory_oracle_eps(32, 0.5);
        assert!((e - 32f64.powf(-2.0625)).abs() < 1e-18);
    }
}
