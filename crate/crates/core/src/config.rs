//! Plain-text `key = value` configuration for the command-line tool.
//!
//! Lines starting with `#` are comments. `profile` (moco, e2e or desk)
//! selects the base defaults wherever it appears in the file; every other
//! key overrides one field. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

use crate::contrast::Mechanism;
use crate::downstream::EvalOptions;
use crate::trainer::PretrainConfig;

pub const SEED_ENV: &str = "GCC_SEED";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("config key {key:?} set twice")]
    Duplicate { key: String },
    #[error("invalid value {value:?} for {key}: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Moco,
    E2e,
    Desk,
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "moco" => Ok(Profile::Moco),
            "e2e" => Ok(Profile::E2e),
            "desk" => Ok(Profile::Desk),
            other => Err(format!("unknown profile {other:?} (expected moco, e2e or desk)")),
        }
    }
}

impl Profile {
    pub fn defaults(self) -> PretrainConfig {
        match self {
            Profile::Moco => PretrainConfig::moco(),
            Profile::E2e => PretrainConfig::e2e(),
            Profile::Desk => PretrainConfig::desk(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub pretrain: PretrainConfig,
    pub eval: EvalOptions,
    /// Graphs per family in the built-in synthetic pre-training corpus.
    pub synthetic_per_family: usize,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Moco)
    }
}

pub const KEYS: &[&str] = &[
    "profile",
    "seed",
    "restart_prob",
    "max_set_size",
    "step_budget",
    "num_layers",
    "hidden_dim",
    "out_dim",
    "positional_dim",
    "degree_buckets",
    "dropout",
    "temperature",
    "dictionary_size",
    "momentum",
    "mechanism",
    "batch_size",
    "total_steps",
    "warmup_steps",
    "peak_lr",
    "weight_decay",
    "beta1",
    "beta2",
    "eps",
    "clip_norm",
    "checkpoint_interval",
    "synthetic_per_family",
    "folds",
    "logreg_l2",
    "logreg_epochs",
    "logreg_lr",
    "finetune_epochs",
    "finetune_lr",
    "finetune_warmup_epochs",
    "finetune_batch_size",
    "graph_cap",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

impl CliConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let pretrain = profile.defaults();
        Self {
            eval: EvalOptions {
                seed: pretrain.seed,
                ..EvalOptions::default()
            },
            pretrain,
            synthetic_per_family: 30,
        }
    }

    /// Parses config text; `env_seed` (the value of `GCC_SEED`, if set)
    /// overrides any `seed` key.
    pub fn parse(text: &str, env_seed: Option<&str>) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(ConfigError::UnknownKey { key: k.to_string() });
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(ConfigError::Duplicate { key: k.to_string() });
            }
        }
        if let Some(seed) = env_seed {
            entries.insert("seed".into(), seed.trim().to_string());
        }

        let profile = match entries.remove("profile") {
            Some(p) => parse::<Profile>("profile", &p)?,
            None => Profile::Moco,
        };
        let mut cfg = Self::for_profile(profile);
        for (k, v) in &entries {
            cfg.set(k, v)?;
        }
        cfg.pretrain
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if cfg.eval.folds < 2 {
            return Err(ConfigError::Invalid(format!("folds must be >= 2, got {}", cfg.eval.folds)));
        }
        Ok(cfg)
    }

    /// Reads `GCC_SEED` from the process environment.
    pub fn parse_with_env(text: &str) -> Result<Self, ConfigError> {
        let seed = std::env::var(SEED_ENV).ok();
        Self::parse(text, seed.as_deref())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let p = &mut self.pretrain;
        match key {
            "seed" => {
                let seed: u64 = parse(key, value)?;
                *p = p.with_seed(seed);
                self.eval.seed = seed;
            }
            "restart_prob" => p.rwr.restart_prob = parse(key, value)?,
            "max_set_size" => p.rwr.max_set_size = parse(key, value)?,
            "step_budget" => p.rwr.step_budget = parse(key, value)?,
            "num_layers" => p.gin.num_layers = parse(key, value)?,
            "hidden_dim" => p.gin.hidden_dim = parse(key, value)?,
            "out_dim" => p.gin.out_dim = parse(key, value)?,
            "positional_dim" => p.gin.positional_dim = parse(key, value)?,
            "degree_buckets" => p.gin.degree_buckets = parse(key, value)?,
            "dropout" => p.gin.dropout = parse(key, value)?,
            "temperature" => p.contrast.temperature = parse(key, value)?,
            "dictionary_size" => p.contrast.dictionary_size = parse(key, value)?,
            "momentum" => p.contrast.momentum = parse(key, value)?,
            "mechanism" => p.contrast.mechanism = parse::<Mechanism>(key, value)?,
            "batch_size" => p.batch_size = parse(key, value)?,
            "total_steps" => p.total_steps = parse(key, value)?,
            "warmup_steps" => p.warmup_steps = parse(key, value)?,
            "peak_lr" => p.peak_lr = parse(key, value)?,
            "weight_decay" => p.adam.weight_decay = parse(key, value)?,
            "beta1" => p.adam.beta1 = parse(key, value)?,
            "beta2" => p.adam.beta2 = parse(key, value)?,
            "eps" => p.adam.eps = parse(key, value)?,
            "clip_norm" => p.clip_norm = parse(key, value)?,
            "checkpoint_interval" => p.checkpoint_interval = parse(key, value)?,
            "synthetic_per_family" => self.synthetic_per_family = parse(key, value)?,
            "folds" => self.eval.folds = parse(key, value)?,
            "logreg_l2" => self.eval.logreg.l2_penalty = parse(key, value)?,
            "logreg_epochs" => self.eval.logreg.epochs = parse(key, value)?,
            "logreg_lr" => self.eval.logreg.lr = parse(key, value)?,
            "finetune_epochs" => self.eval.finetune.epochs = parse(key, value)?,
            "finetune_lr" => self.eval.finetune.peak_lr = parse(key, value)?,
            "finetune_warmup_epochs" => self.eval.finetune.warmup_epochs = parse(key, value)?,
            "finetune_batch_size" => self.eval.finetune.batch_size = parse(key, value)?,
            "graph_cap" => self.eval.graph_cap = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey { key: other.to_string() }),
        }
        Ok(())
    }
}
