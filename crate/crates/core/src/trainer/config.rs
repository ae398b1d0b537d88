use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffcore::hex_digest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// `theta -= lr * grad`.
    Sgd,
    /// Heavy-ball momentum.
    Momentum,
    /// Adaptive moments with bias correction.
    Adam,
}

/// Every scalar knob of the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PPOConfig {
    pub clip_epsilon: f64,
    pub entropy_weight: f64,
    pub value_weight: f64,
    pub mean_penalty: f64,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub r1_gamma: f64,
    pub disc_steps: usize,
    pub noise_dim: usize,
    pub iterations: usize,
    pub ppo_epochs: usize,
    pub batch_size: usize,
    pub gen_width: usize,
    pub gen_depth: usize,
    pub disc_width: usize,
    pub disc_depth: usize,
    pub seed: u64,
    /// Bound on `log p - log p_old` before exponentiation.
    pub log_ratio_clamp: f64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Iterations between checkpoints; 0 disables intermediate checkpoints.
    pub checkpoint_interval: usize,
    /// Fraction of rows assigned to the training split.
    pub split_fraction: f64,
}

/// Built-in profile names accepted by [`PPOConfig::profile`].
pub const PROFILES: [&str; 3] = ["mimic-like", "aireadi-like", "bench-small"];

impl Default for PPOConfig {
    fn default() -> Self {
        Self::aireadi_like()
    }
}

impl PPOConfig {
    /// Hyperparameters tuned for the larger EHR cohort.
    pub fn mimic_like() -> Self {
        Self {
            clip_epsilon: 0.1,
            entropy_weight: 0.001,
            value_weight: 0.5,
            mean_penalty: 0.0,
            lr_gen: 0.0005,
            lr_disc: 0.0001,
            r1_gamma: 5.0,
            disc_steps: 3,
            noise_dim: 128,
            iterations: 30_000,
            ppo_epochs: 2,
            batch_size: 3840,
            gen_width: 128,
            gen_depth: 1,
            disc_width: 256,
            disc_depth: 1,
            seed: 0,
            log_ratio_clamp: 10.0,
            optimizer: OptimizerKind::Sgd,
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_interval: 1000,
            split_fraction: 0.7,
        }
    }

    /// Hyperparameters tuned for the smaller wearable + clinical cohort.
    pub fn aireadi_like() -> Self {
        Self {
            mean_penalty: 0.2,
            lr_gen: 0.0002,
            lr_disc: 0.00005,
            disc_steps: 5,
            ppo_epochs: 3,
            batch_size: 384,
            disc_width: 128,
            split_fraction: 0.9,
            ..Self::mimic_like()
        }
    }

    /// Desk-scale profile used by the end-to-end benchmark.
    pub fn bench_small() -> Self {
        Self {
            clip_epsilon: 0.1,
            entropy_weight: 0.001,
            value_weight: 0.5,
            mean_penalty: 0.2,
            lr_gen: 0.001,
            lr_disc: 0.0005,
            r1_gamma: 5.0,
            disc_steps: 2,
            noise_dim: 16,
            iterations: 3000,
            ppo_epochs: 3,
            batch_size: 512,
            gen_width: 64,
            gen_depth: 1,
            disc_width: 64,
            disc_depth: 1,
            seed: 0,
            log_ratio_clamp: 10.0,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_interval: 1000,
            split_fraction: 0.9,
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "mimic-like" => Ok(Self::mimic_like()),
            "aireadi-like" => Ok(Self::aireadi_like()),
            "bench-small" => Ok(Self::bench_small()),
            other => Err(Error::Config(vec![format!(
                "unknown profile `{other}` (expected one of {})",
                PROFILES.join(", ")
            )])),
        }
    }

    /// Parses a TOML config. An optional top-level `profile` key picks the base
    /// profile (default `aireadi-like`); every other key overrides a field.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse()?;
        let base = match table.remove("profile") {
            Some(toml::Value::String(name)) => Self::profile(&name)?,
            Some(other) => {
                return Err(Error::Config(vec![format!(
                    "`profile` must be a string, got {other}"
                )]))
            }
            None => Self::default(),
        };
        let mut merged = toml::Table::try_from(&base)
            .map_err(|e| Error::Config(vec![e.to_string()]))?;
        for (k, v) in table {
            merged.insert(k, v);
        }
        let cfg: Self = merged.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every constraint and reports all violations together.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                errs.push(msg);
            }
        };
        need(
            self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0,
            format!("clip_epsilon = {} must lie in (0, 1)", self.clip_epsilon),
        );
        for (name, v) in [
            ("entropy_weight", self.entropy_weight),
            ("value_weight", self.value_weight),
            ("mean_penalty", self.mean_penalty),
            ("r1_gamma", self.r1_gamma),
        ] {
            need(v >= 0.0 && v.is_finite(), format!("{name} = {v} must be >= 0"));
        }
        for (name, v) in [("lr_gen", self.lr_gen), ("lr_disc", self.lr_disc)] {
            need(v > 0.0 && v.is_finite(), format!("{name} = {v} must be > 0"));
        }
        for (name, v) in [
            ("disc_steps", self.disc_steps),
            ("ppo_epochs", self.ppo_epochs),
            ("noise_dim", self.noise_dim),
            ("gen_width", self.gen_width),
            ("disc_width", self.disc_width),
        ] {
            need(v >= 1, format!("{name} = {v} must be >= 1"));
        }
        need(
            self.batch_size >= 2,
            format!("batch_size = {} must be >= 2", self.batch_size),
        );
        need(
            self.log_ratio_clamp > 0.0,
            format!("log_ratio_clamp = {} must be > 0", self.log_ratio_clamp),
        );
        need(
            (0.0..1.0).contains(&self.momentum),
            format!("momentum = {} must lie in [0, 1)", self.momentum),
        );
        need(
            (0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2),
            format!(
                "adam_beta1 = {}, adam_beta2 = {} must lie in [0, 1)",
                self.adam_beta1, self.adam_beta2
            ),
        );
        need(self.adam_eps > 0.0, format!("adam_eps = {} must be > 0", self.adam_eps));
        need(
            self.split_fraction > 0.0 && self.split_fraction < 1.0,
            format!("split_fraction = {} must lie in (0, 1)", self.split_fraction),
        );
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(self).expect("config serializes").as_bytes());
        hex_digest(h)
    }
}
