//! Flat TOML run configuration with `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use semishot_core::augment::{link_pairs, Augmentation};
use semishot_core::corpus::{CorpusSplit, SplitSpec};
use semishot_core::losses::LossConfig;
use semishot_core::trainer::{AdamConfig, TrainConfig};

use crate::error::{CliError, Result};
use crate::io;

pub const RESOLVED_FILE: &str = "config.resolved";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    /// Seeded token drop and swap.
    Noise,
    /// Paraphrases read from `pairs_data`.
    Paired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Tokens kept per text before hashing; 0 keeps all.
    pub max_length: usize,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub learning_rate: f64,
    pub max_step: usize,
    pub scl_temperature: f64,
    pub cc_temperature: f64,
    pub warmup_percent: f64,
    pub weight_decay: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub cc_stop_grad: bool,
    #[serde(rename = "F")]
    pub features: usize,
    pub h: usize,
    pub d: usize,
    pub eval_every: usize,
    pub seeds: Vec<u64>,
    #[serde(rename = "K")]
    pub per_class: usize,
    pub unlabeled: usize,
    pub dev: usize,
    pub augmentation: AugmentMode,
    pub drop_prob: f64,
    pub swap_prob: f64,
    /// Class names in index order; taken from the training data when empty.
    pub labels: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs_data: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let split = SplitSpec::default();
        Self {
            max_length: train.max_tokens,
            labeled_batch: train.labeled_batch,
            unlabeled_batch: train.unlabeled_batch,
            learning_rate: train.peak_lr,
            max_step: train.max_steps,
            scl_temperature: train.loss.tau_scl,
            cc_temperature: train.loss.tau_cc,
            warmup_percent: train.warmup_fraction,
            weight_decay: train.weight_decay,
            lambda1: train.loss.lambda1,
            lambda2: train.loss.lambda2,
            lambda3: train.loss.lambda3,
            cc_stop_grad: train.loss.cc_stop_grad,
            features: train.features,
            h: train.hidden,
            d: train.embed,
            eval_every: train.eval_every,
            seeds: vec![1, 2, 3],
            per_class: split.per_class,
            unlabeled: split.unlabeled,
            dev: split.dev,
            augmentation: AugmentMode::Noise,
            drop_prob: 0.1,
            swap_prob: 0.1,
            labels: Vec::new(),
            train_data: None,
            test_data: None,
            pairs_data: None,
        }
    }
}

/// Splits `key=value`; the value is read as a TOML value, falling back to a
/// bare string.
fn parse_override(raw: &str) -> Result<(String, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {raw:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Config(format!("override {raw:?} has an empty key")));
    }
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

impl RunConfig {
    /// Reads `path` (if any), applies overrides, resolves data paths against
    /// the config file's directory and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => io::read_string(p)?
                .parse::<toml::Table>()
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None => toml::Table::new(),
        };
        let mut overridden = Vec::new();
        for raw in overrides {
            let (key, value) = parse_override(raw)?;
            overridden.push(key.clone());
            table.insert(key, value);
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        // paths from the file are relative to it; overrides to the cwd
        let base = path.and_then(Path::parent).map(Path::to_path_buf).unwrap_or_default();
        for (key, slot) in [
            ("train_data", &mut cfg.train_data),
            ("test_data", &mut cfg.test_data),
            ("pairs_data", &mut cfg.pairs_data),
        ] {
            if let Some(p) = slot.as_mut() {
                let joined = if overridden.iter().any(|k| k == key) {
                    p.clone()
                } else {
                    base.join(&*p)
                };
                *p = std::path::absolute(&joined).map_err(|e| CliError::io(joined, e))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CliError::Config(String::from("at least one seed is required")));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(CliError::Config(format!("seeds must be distinct, got {:?}", self.seeds)));
        }
        if self.augmentation == AugmentMode::Paired && self.pairs_data.is_none() {
            return Err(CliError::Config(String::from("augmentation = \"paired\" needs pairs_data")));
        }
        self.train_config(self.seeds[0]).validate()?;
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            max_steps: self.max_step,
            labeled_batch: self.labeled_batch,
            unlabeled_batch: self.unlabeled_batch,
            peak_lr: self.learning_rate,
            warmup_fraction: self.warmup_percent,
            weight_decay: self.weight_decay,
            loss: LossConfig {
                tau_scl: self.scl_temperature,
                tau_cc: self.cc_temperature,
                lambda1: self.lambda1,
                lambda2: self.lambda2,
                lambda3: self.lambda3,
                cc_stop_grad: self.cc_stop_grad,
            },
            adam: AdamConfig::default(),
            seed,
            eval_every: self.eval_every,
            features: self.features,
            hidden: self.h,
            embed: self.d,
            max_tokens: self.max_length,
        }
    }

    /// Inverse of [`RunConfig::train_config`] for the training keys.
    pub fn set_train_config(&mut self, t: &TrainConfig) {
        self.max_step = t.max_steps;
        self.labeled_batch = t.labeled_batch;
        self.unlabeled_batch = t.unlabeled_batch;
        self.learning_rate = t.peak_lr;
        self.warmup_percent = t.warmup_fraction;
        self.weight_decay = t.weight_decay;
        self.scl_temperature = t.loss.tau_scl;
        self.cc_temperature = t.loss.tau_cc;
        self.lambda1 = t.loss.lambda1;
        self.lambda2 = t.loss.lambda2;
        self.lambda3 = t.loss.lambda3;
        self.cc_stop_grad = t.loss.cc_stop_grad;
        self.eval_every = t.eval_every;
        self.features = t.features;
        self.h = t.hidden;
        self.d = t.embed;
        self.max_length = t.max_tokens;
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            per_class: self.per_class,
            unlabeled: self.unlabeled,
            dev: self.dev,
        }
    }

    /// Augmentation for the unlabeled bucket of `split`.
    pub fn augmentation(&self, split: &CorpusSplit, seed: u64) -> Result<Augmentation> {
        match self.augmentation {
            AugmentMode::Noise => Ok(Augmentation::LexicalNoise {
                drop_prob: self.drop_prob,
                swap_prob: self.swap_prob,
                seed,
            }),
            AugmentMode::Paired => {
                let path = self.pairs_data.as_ref().expect("validated");
                let records = io::load_pairs(path)?;
                let pairs = link_pairs(&split.unlabeled, &records)?;
                Ok(Augmentation::external(&split.unlabeled, &pairs)?)
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        io::write_bytes(&dir.join(RESOLVED_FILE), self.to_toml().as_bytes())
    }

    pub fn require_train_data(&self) -> Result<&Path> {
        self.train_data
            .as_deref()
            .ok_or_else(|| CliError::Config(String::from("train_data is not set")))
    }
}
