//! Accuracy, seed aggregation and the ablation matrix.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::hash::Hasher;

use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use crate::augment::Augmentation;
use crate::corpus::{CorpusSplit, Example};
use crate::encoder::{EncoderParams, FeatureVector};
use crate::error::{contract, Result};
use crate::trainer::{train, StepState, TrainConfig};

const EVAL_CHUNK: usize = 256;

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = k;
        }
    }
    best
}

/// Predicted class per feature vector; ties go to the lower class index.
pub fn predict_features(params: &EncoderParams, feats: &[FeatureVector]) -> Result<Vec<usize>> {
    let classes = params.dims.classes;
    let mut out = Vec::with_capacity(feats.len());
    for chunk in feats.chunks(EVAL_CHUNK) {
        let (_, logits) = params.encode_many(chunk)?;
        out.extend(logits.data().chunks(classes).map(argmax));
    }
    Ok(out)
}

pub fn predict(params: &EncoderParams, texts: &[&str]) -> Result<Vec<usize>> {
    let featurizer = params.featurizer();
    let feats: Vec<FeatureVector> = texts.iter().map(|t| featurizer.featurize(t)).collect();
    predict_features(params, &feats)
}

/// Percentage of `labels` matched by the argmax of the logits.
pub fn accuracy_on_features(params: &EncoderParams, feats: &[FeatureVector], labels: &[usize]) -> Result<f64> {
    if feats.is_empty() {
        return Err(contract!("accuracy of an empty set"));
    }
    if feats.len() != labels.len() {
        return Err(contract!("{} inputs but {} labels", feats.len(), labels.len()));
    }
    let predicted = predict_features(params, feats)?;
    let correct = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * correct as f64 / feats.len() as f64)
}

pub fn accuracy(params: &EncoderParams, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(contract!("accuracy of an empty set"));
    }
    let mut labels = Vec::with_capacity(examples.len());
    for e in examples {
        match e.label {
            Some(l) => labels.push(l),
            None => return Err(contract!("example {:?} has no label", e.id)),
        }
    }
    let featurizer = params.featurizer();
    let feats: Vec<FeatureVector> = examples.iter().map(|e| featurizer.featurize(&e.text)).collect();
    accuracy_on_features(params, &feats, &labels)
}

/// Stable hash of every effective training setting.
pub fn config_fingerprint(config: &TrainConfig) -> String {
    let mut text = String::new();
    let _ = write!(text, "{config:?}");
    let mut h = XxHash64::with_seed(0);
    h.write(text.as_bytes());
    format!("{:016x}", h.finish())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub per_seed_accuracy: Vec<f64>,
    pub mean: f64,
    pub sem: f64,
    pub fingerprint: String,
}

impl RunMetrics {
    /// `mean±sem` with two decimals, e.g. `86.43±1.21`.
    pub fn display(&self) -> String {
        format!("{:.2}±{:.2}", self.mean, self.sem)
    }
}

/// Mean and standard error (sample standard deviation over `sqrt(k)`) of
/// per-seed accuracies.
pub fn aggregate(per_seed_accuracy: &[f64], fingerprint: &str) -> Result<RunMetrics> {
    let k = per_seed_accuracy.len();
    if k < 2 {
        return Err(contract!("aggregation needs at least 2 runs, got {k}"));
    }
    // order-independent summation so permuting runs cannot change the bits
    let mut sorted = per_seed_accuracy.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / k as f64;
    let var = sorted.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (k - 1) as f64;
    let sem = libm::sqrt(var) / libm::sqrt(k as f64);
    Ok(RunMetrics {
        per_seed_accuracy: per_seed_accuracy.to_vec(),
        mean: mean.clamp(sorted[0], sorted[k - 1]),
        sem,
        fingerprint: String::from(fingerprint),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    WithoutScl,
    WithoutCc,
    WithoutCon,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [Self::Full, Self::WithoutScl, Self::WithoutCc, Self::WithoutCon];

    pub fn label(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::WithoutScl => "w/o SCL",
            Self::WithoutCc => "w/o CC",
            Self::WithoutCon => "w/o CON",
        }
    }

    pub fn note(self) -> Option<&'static str> {
        match self {
            Self::WithoutCon => Some("consistency term removed (lambda2 = 0)"),
            _ => None,
        }
    }

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Self::Full => {}
            Self::WithoutScl => cfg.loss.lambda1 = 0.0,
            Self::WithoutCon => cfg.loss.lambda2 = 0.0,
            Self::WithoutCc => cfg.loss.lambda3 = 0.0,
        }
        cfg
    }
}

/// Test accuracy of the dev-selected checkpoint after training on `split`.
pub fn run_once(split: &CorpusSplit, augmentation: &Augmentation, config: &TrainConfig) -> Result<(f64, Vec<StepState>)> {
    let outcome = train(split, augmentation, config)?;
    let acc = accuracy(&outcome.best.params, &split.test)?;
    Ok((acc, outcome.steps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub label: String,
    pub metrics: RunMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: AblationVariant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Aligned text rendering, one row per variant.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.chars().count()).max().unwrap_or(0).max(7);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>13}  per-seed", "variant", "accuracy");
        for r in &self.rows {
            let seeds: Vec<String> = r.metrics.per_seed_accuracy.iter().map(|a| format!("{a:.2}")).collect();
            let _ = write!(out, "{:<width$}  {:>13}  {}", r.label, r.metrics.display(), seeds.join(" "));
            if let Some(note) = &r.note {
                let _ = write!(out, "  ({note})");
            }
            out.push('\n');
        }
        out
    }
}

/// Builds a table from per-variant accuracies, in `AblationVariant::ALL` order.
pub fn ablation_table(base: &TrainConfig, results: &[(AblationVariant, Vec<f64>)]) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(results.len());
    for variant in AblationVariant::ALL {
        let Some((_, accs)) = results.iter().find(|(v, _)| *v == variant) else {
            continue;
        };
        let cfg = variant.apply(base);
        rows.push(AblationRow {
            variant,
            label: String::from(variant.label()),
            metrics: aggregate(accs, &config_fingerprint(&cfg))?,
            note: variant.note().map(String::from),
        });
    }
    Ok(AblationTable { rows })
}

/// Runs every variant over every prepared split, sequentially.
pub fn ablate(base: &TrainConfig, runs: &[(CorpusSplit, Augmentation)]) -> Result<AblationTable> {
    base.validate()?;
    let mut results = Vec::new();
    for variant in AblationVariant::ALL {
        let cfg = variant.apply(base);
        let mut accs = Vec::with_capacity(runs.len());
        for (split, aug) in runs {
            let cfg = TrainConfig {
                seed: split.seed,
                ..cfg.clone()
            };
            accs.push(run_once(split, aug, &cfg)?.0);
        }
        results.push((variant, accs));
    }
    ablation_table(base, &results)
}
