//! Optimisation of the combined objective
//! `L = L_ce + l1 L_scl + l2 L_con + alpha l3 L_cc`.

mod adam;
mod schedule;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use schedule::{alpha_schedule, lr_schedule};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::augment::Augmentation;
use crate::corpus::CorpusSplit;
use crate::diff::Graph;
use crate::encoder::{EncoderDims, EncoderParams, FeatureVector, Featurizer};
use crate::error::{Error, Result};
use crate::eval::accuracy_on_features;
use crate::losses::{cc_loss, ce_loss, consistency_loss, scl_loss, LossConfig};
use crate::rng::SeededRng;

/// Stream tags of the trainer's generators under the run seed.
pub const INIT_STREAM: u64 = 1;
pub const LABELED_STREAM: u64 = 2;
pub const UNLABELED_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_steps: usize,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Dev accuracy is measured every this many steps and after the last.
    pub eval_every: usize,
    pub features: usize,
    pub hidden: usize,
    pub embed: usize,
    /// Token truncation applied before hashing; 0 disables it.
    pub max_tokens: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let dims = EncoderDims::default();
        Self {
            max_steps: 2000,
            labeled_batch: 8,
            unlabeled_batch: 32,
            peak_lr: 1e-3,
            warmup_fraction: 0.1,
            weight_decay: 0.01,
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            seed: 0,
            eval_every: 100,
            features: dims.features,
            hidden: dims.hidden,
            embed: dims.embed,
            max_tokens: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.max_steps == 0 {
            return fail(String::from("max_steps must be at least 1"));
        }
        if self.labeled_batch < 2 || self.unlabeled_batch < 2 {
            return fail(format!(
                "batch sizes must be at least 2 (labeled {}, unlabeled {})",
                self.labeled_batch, self.unlabeled_batch
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return fail(format!("warmup fraction {} outside [0, 1)", self.warmup_fraction));
        }
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return fail(format!("invalid learning rate {} or weight decay {}", self.peak_lr, self.weight_decay));
        }
        if self.eval_every == 0 {
            return fail(String::from("eval_every must be at least 1"));
        }
        if self.features < 2 || self.hidden == 0 || self.embed == 0 {
            return fail(format!(
                "bad encoder dims F={} h={} d={}",
                self.features, self.hidden, self.embed
            ));
        }
        self.loss.validate()
    }

    pub fn dims(&self, classes: usize) -> EncoderDims {
        EncoderDims {
            features: self.features,
            hidden: self.hidden,
            embed: self.embed,
            classes,
        }
    }

    pub fn featurizer(&self) -> Featurizer {
        Featurizer {
            max_tokens: self.max_tokens,
            ..Featurizer::new(self.features)
        }
    }

    fn uses_unlabeled(&self) -> bool {
        self.loss.lambda2 != 0.0 || self.loss.lambda3 != 0.0
    }
}

/// Loss values of one step. Terms whose weight is zero in the
/// configuration are not computed and stay `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub ce: f64,
    pub scl: Option<f64>,
    pub con: Option<f64>,
    pub cc: Option<f64>,
}

/// `ce + l1 scl + l2 con + (alpha l3) cc`, summed left to right over the
/// present terms whose weight is nonzero.
pub fn total_loss(components: &LossComponents, loss: &LossConfig, alpha: f64) -> Result<f64> {
    let named = [
        ("l_ce", Some(components.ce)),
        ("l_scl", components.scl),
        ("l_con", components.con),
        ("l_cc", components.cc),
    ];
    for (component, value) in named {
        if let Some(value) = value {
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { component, value });
            }
        }
    }
    let mut total = components.ce;
    for (weight, value) in term_weights(loss, alpha).into_iter().zip([components.scl, components.con, components.cc]) {
        if let Some(value) = value {
            if weight != 0.0 {
                total += weight * value;
            }
        }
    }
    Ok(total)
}

fn term_weights(loss: &LossConfig, alpha: f64) -> [f64; 3] {
    [loss.lambda1, loss.lambda2, alpha * loss.lambda3]
}

/// Record of one optimisation step; one line of the step log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepState {
    pub step: usize,
    pub alpha: f64,
    pub lr: f64,
    pub l_ce: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_scl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_con: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_cc: Option<f64>,
    pub l_total: f64,
}

impl StepState {
    pub fn components(&self) -> LossComponents {
        LossComponents {
            ce: self.l_ce,
            scl: self.l_scl,
            con: self.l_con,
            cc: self.l_cc,
        }
    }
}

/// Parameters selected by dev accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: EncoderParams,
    /// Number of completed steps when the snapshot was taken.
    pub step: usize,
    pub dev_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub final_params: EncoderParams,
    pub steps: Vec<StepState>,
    pub best: Checkpoint,
    /// `(completed steps, dev accuracy)` at every evaluation.
    pub dev_history: Vec<(usize, f64)>,
}

/// Index stream over a pool: shuffled passes without replacement when the
/// pool holds at least one batch, independent uniform draws otherwise. Each
/// drawn index carries the pass (epoch) it came from.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    pool: usize,
    batch: usize,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    rng: SeededRng,
}

impl BatchSampler {
    pub fn new(pool: usize, batch: usize, rng: SeededRng) -> Self {
        let mut sampler = Self {
            pool,
            batch,
            order: (0..pool).collect(),
            cursor: 0,
            epoch: 0,
            rng,
        };
        if pool >= batch {
            sampler.rng.shuffle(&mut sampler.order);
        }
        sampler
    }

    pub fn with_replacement(&self) -> bool {
        self.pool < self.batch
    }

    pub fn next_batch(&mut self) -> Vec<(usize, u64)> {
        if self.with_replacement() {
            return (0..self.batch).map(|_| (self.rng.below(self.pool), 0)).collect();
        }
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.cursor == self.pool {
                self.rng.shuffle(&mut self.order);
                self.cursor = 0;
                self.epoch += 1;
            }
            out.push((self.order[self.cursor], self.epoch));
            self.cursor += 1;
        }
        out
    }
}

/// Non-finite values met while building a step become a numeric fault that
/// carries the previous step's losses.
fn to_fault(step: usize, err: Error, previous: Option<&StepState>) -> Error {
    match err {
        Error::NonFinite { op } => Error::NumericFault {
            step,
            detail: format!("{op} produced a non-finite value; previous step {previous:?}"),
        },
        other => other,
    }
}

fn featurize_all(featurizer: &Featurizer, texts: impl Iterator<Item = impl AsRef<str>>) -> Vec<FeatureVector> {
    texts.map(|t| featurizer.featurize(t.as_ref())).collect()
}

/// Trains an encoder on `split` and returns the final parameters, the step
/// log and the best-dev checkpoint (the final parameters when there is no
/// dev set).
pub fn train(split: &CorpusSplit, augmentation: &Augmentation, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if split.labeled.is_empty() {
        return Err(Error::Config(String::from("labeled set is empty")));
    }
    if split.unlabeled.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 unlabeled examples, got {}",
            split.unlabeled.len()
        )));
    }
    augmentation.validate(split.unlabeled.len())?;
    let classes = split.classes();
    let labels: Vec<usize> = split
        .labeled
        .iter()
        .map(|e| e.label.ok_or_else(|| Error::Config(format!("labeled example {:?} has no label", e.id))))
        .collect::<Result<_>>()?;
    let dev_labels: Option<Vec<usize>> = split.dev.iter().map(|e| e.label).collect();
    let dev_labels = dev_labels.ok_or_else(|| Error::Config(String::from("dev examples must be labeled")))?;

    let featurizer = config.featurizer();
    let labeled_feats = featurize_all(&featurizer, split.labeled.iter().map(|e| &e.text));
    let unlabeled_feats = featurize_all(&featurizer, split.unlabeled.iter().map(|e| &e.text));
    let dev_feats = featurize_all(&featurizer, split.dev.iter().map(|e| &e.text));

    let dims = config.dims(classes);
    let mut params = EncoderParams::init(SeededRng::stream(config.seed, INIT_STREAM).next_u64(), dims)?;
    params.hash_seed = featurizer.hash_seed;
    let sizes: Vec<usize> = params.arrays().iter().map(|a| a.len()).collect();
    // weight matrices decay, biases do not
    let decay = [true, false, true, false, true, false];
    let mut adam = AdamState::new(&sizes);

    let mut labeled_sampler = BatchSampler::new(
        split.labeled.len(),
        config.labeled_batch,
        SeededRng::stream(config.seed, LABELED_STREAM),
    );
    let unlabeled_batch = config.unlabeled_batch.min(split.unlabeled.len());
    let mut unlabeled_sampler = BatchSampler::new(
        split.unlabeled.len(),
        unlabeled_batch,
        SeededRng::stream(config.seed, UNLABELED_STREAM),
    );

    let loss_cfg = config.loss;
    let total_steps = config.max_steps;
    let mut steps = Vec::with_capacity(total_steps);
    let mut best: Option<Checkpoint> = None;
    let mut dev_history = Vec::new();

    for t in 0..total_steps {
        let alpha = alpha_schedule(t, total_steps)?;
        let lr = lr_schedule(t, total_steps, config.warmup_fraction, config.peak_lr)?;

        let picks = labeled_sampler.next_batch();
        let batch_feats: Vec<FeatureVector> = picks.iter().map(|&(i, _)| labeled_feats[i].clone()).collect();
        let batch_labels: Vec<usize> = picks.iter().map(|&(i, _)| labels[i]).collect();

        let mut g = Graph::new();
        let vars = params.bind_owned(&mut g, true);
        let enc = crate::encoder::encode_batch(&mut g, &vars, dims, &batch_feats).map_err(|e| to_fault(t, e, steps.last()))?;
        let ce = ce_loss(&mut g, enc.logits, &batch_labels).map_err(|e| to_fault(t, e, steps.last()))?;
        let scl = if loss_cfg.lambda1 != 0.0 {
            Some(scl_loss(&mut g, enc.z, &batch_labels, loss_cfg.tau_scl).map_err(|e| to_fault(t, e, steps.last()))?)
        } else {
            None
        };

        let (mut con, mut cc) = (None, None);
        if config.uses_unlabeled() {
            let picks = unlabeled_sampler.next_batch();
            let orig: Vec<FeatureVector> = picks.iter().map(|&(i, _)| unlabeled_feats[i].clone()).collect();
            let aug: Vec<FeatureVector> = picks
                .iter()
                .map(|&(i, epoch)| featurizer.featurize(&augmentation.augment(&split.unlabeled[i].text, i, epoch)))
                .collect();
            let enc_orig = crate::encoder::encode_batch(&mut g, &vars, dims, &orig).map_err(|e| to_fault(t, e, steps.last()))?;
            let enc_aug = crate::encoder::encode_batch(&mut g, &vars, dims, &aug).map_err(|e| to_fault(t, e, steps.last()))?;
            if loss_cfg.lambda2 != 0.0 {
                con = Some(consistency_loss(&mut g, enc_orig.logits, enc_aug.logits).map_err(|e| to_fault(t, e, steps.last()))?);
            }
            if loss_cfg.lambda3 != 0.0 {
                cc = Some(cc_loss(&mut g, enc_orig.z, enc_aug.z, loss_cfg.tau_cc, loss_cfg.cc_stop_grad).map_err(|e| to_fault(t, e, steps.last()))?);
            }
        }

        let mut terms = alloc::vec![(ce, 1.0)];
        for (weight, term) in term_weights(&loss_cfg, alpha).into_iter().zip([scl, con, cc]) {
            if let Some(term) = term {
                if weight != 0.0 {
                    terms.push((term, weight));
                }
            }
        }
        let root = g.weighted_sum(&terms).map_err(|e| to_fault(t, e, steps.last()))?;

        let components = LossComponents {
            ce: g.scalar(ce),
            scl: scl.map(|v| g.scalar(v)),
            con: con.map(|v| g.scalar(v)),
            cc: cc.map(|v| g.scalar(v)),
        };
        let l_total = g.scalar(root);
        let fault = |component: &'static str, value: f64| Error::NumericFault {
            step: t,
            detail: format!("{component} = {value}; components {components:?}"),
        };
        let reconstructed = total_loss(&components, &loss_cfg, alpha).map_err(|e| match e {
            Error::NonFiniteLoss { component, value } => fault(component, value),
            other => other,
        })?;
        if !l_total.is_finite() {
            return Err(fault("l_total", l_total));
        }
        debug_assert_eq!(reconstructed.to_bits(), l_total.to_bits());

        g.backward(root)?;
        let grads = params.reclaim(&mut g, &vars);
        if let Some((k, _)) = grads.iter().enumerate().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
            return Err(fault(crate::encoder::PARAM_NAMES[k], f64::NAN));
        }
        adam_step(
            &mut params.arrays_mut(),
            &grads,
            &decay,
            &mut adam,
            lr,
            config.weight_decay,
            &config.adam,
        )?;
        let arrays = params.arrays();
        if let Some(k) = (0..arrays.len()).find(|&k| arrays[k].iter().any(|v| !v.is_finite())) {
            return Err(fault(crate::encoder::PARAM_NAMES[k], f64::NAN));
        }

        steps.push(StepState {
            step: t,
            alpha,
            lr,
            l_ce: components.ce,
            l_scl: components.scl,
            l_con: components.con,
            l_cc: components.cc,
            l_total,
        });

        let done = t + 1;
        if !split.dev.is_empty() && (done % config.eval_every == 0 || done == total_steps) {
            let acc = accuracy_on_features(&params, &dev_feats, &dev_labels)?;
            dev_history.push((done, acc));
            if best.as_ref().and_then(|b| b.dev_accuracy).is_none_or(|b| acc > b) {
                best = Some(Checkpoint {
                    params: params.clone(),
                    step: done,
                    dev_accuracy: Some(acc),
                });
            }
        }
    }

    let best = best.unwrap_or_else(|| Checkpoint {
        params: params.clone(),
        step: total_steps,
        dev_accuracy: None,
    });
    Ok(TrainOutcome {
        final_params: params,
        steps,
        best,
        dev_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_loss_gates_cc_with_alpha() {
        let loss = LossConfig::default();
        let parts = LossComponents {
            ce: 1.0,
            scl: Some(2.0),
            con: Some(3.0),
            cc: Some(4.0),
        };
        assert_eq!(total_loss(&parts, &loss, 0.0).unwrap(), 6.0);
        assert_eq!(total_loss(&parts, &loss, 1.0).unwrap(), 10.0);
        let off = LossConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            ..loss
        };
        assert_eq!(total_loss(&parts, &off, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn total_loss_names_non_finite_component() {
        let parts = LossComponents {
            ce: 1.0,
            scl: Some(f64::NAN),
            con: None,
            cc: None,
        };
        match total_loss(&parts, &LossConfig::default(), 0.0) {
            Err(Error::NonFiniteLoss { component, .. }) => assert_eq!(component, "l_scl"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sampler_cycles_without_replacement() {
        let mut s = BatchSampler::new(10, 4, SeededRng::new(1));
        let mut seen: Vec<(usize, u64)> = Vec::new();
        for _ in 0..5 {
            seen.extend(s.next_batch());
        }
        let first: Vec<usize> = seen.iter().filter(|p| p.1 == 0).map(|p| p.0).collect();
        let mut sorted = first.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        assert!(seen.iter().any(|p| p.1 == 1));
    }

    #[test]
    fn sampler_small_pool_uses_replacement() {
        let mut s = BatchSampler::new(3, 8, SeededRng::new(1));
        assert!(s.with_replacement());
        let b = s.next_batch();
        assert_eq!(b.len(), 8);
        assert!(b.iter().all(|p| p.0 < 3));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            unlabeled_batch: 1,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            warmup_fraction: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
