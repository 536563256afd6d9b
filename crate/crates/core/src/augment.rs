//! The augmentation channel: seeded lexical noise, or paraphrases produced
//! elsewhere (e.g. by back-translation) and paired to the unlabeled set.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentSource {
    LexicalNoise,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedPair {
    pub original: Example,
    pub augmented_text: String,
    pub source: AugmentSource,
}

/// Drops and swaps whitespace tokens.
///
/// Each token is dropped independently with `drop_prob`; if every token
/// would go, the token at a uniformly drawn position is kept. The survivors
/// are then scanned left to right and each adjacent pair `(i, i + 1)` is
/// swapped with `swap_prob`, after which the scan resumes at `i + 2`.
/// Output tokens are joined by single spaces; when nothing was dropped or
/// swapped the input is returned unchanged.
pub fn lexical_noise(text: &str, drop_prob: f64, swap_prob: f64, seed: u64) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.is_empty() {
        return String::from(text);
    }
    let mut rng = SeededRng::new(seed);
    let mut kept: Vec<&str> = tokens.iter().copied().filter(|_| !rng.bernoulli(drop_prob)).collect();
    if kept.is_empty() {
        kept.push(tokens[rng.below(tokens.len())]);
    }
    let mut changed = kept.len() != tokens.len();
    let mut i = 0;
    while i + 1 < kept.len() {
        if rng.bernoulli(swap_prob) {
            kept.swap(i, i + 1);
            changed = true;
            i += 2;
        } else {
            i += 1;
        }
    }
    if changed {
        kept.join(" ")
    } else {
        String::from(text)
    }
}

/// Per-example noise seed for a given pass over the unlabeled set: the base
/// seed advanced by the epoch, mixed with the example's position.
pub fn noise_seed(base: u64, epoch: u64, index: usize) -> u64 {
    SeededRng::stream(base.wrapping_add(epoch), index as u64).next_u64()
}

/// One line of a paired-augmentation file. `id`, when present, takes
/// precedence over matching by `text`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub text: String,
    pub aug: String,
}

/// Matches paired records to unlabeled examples, by explicit id or else by
/// exact text. A text shared by several unlabeled examples pairs with all of
/// them. Records that match nothing are reported together.
pub fn link_pairs(unlabeled: &[Example], records: &[PairRecord]) -> Result<Vec<AugmentedPair>> {
    let by_id: BTreeMap<&str, &Example> = unlabeled.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut by_text: BTreeMap<&str, Vec<&Example>> = BTreeMap::new();
    for e in unlabeled {
        by_text.entry(e.text.as_str()).or_default().push(e);
    }
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for (line, rec) in records.iter().enumerate() {
        let matched: Vec<&Example> = match &rec.id {
            Some(id) => by_id.get(id.as_str()).map(|e| alloc::vec![*e]).unwrap_or_default(),
            None => by_text.get(rec.text.as_str()).cloned().unwrap_or_default(),
        };
        if matched.is_empty() {
            unmatched.push(match &rec.id {
                Some(id) => alloc::format!("line {}: id {id:?}", line + 1),
                None => alloc::format!("line {}: text {:?}", line + 1, rec.text),
            });
            continue;
        }
        for e in matched {
            pairs.push(AugmentedPair {
                original: e.clone(),
                augmented_text: rec.aug.clone(),
                source: AugmentSource::External,
            });
        }
    }
    if unmatched.is_empty() {
        Ok(pairs)
    } else {
        Err(Error::Linkage(unmatched))
    }
}

/// How the trainer obtains `a(x)` for unlabeled examples.
#[derive(Debug, Clone, PartialEq)]
pub enum Augmentation {
    /// Fresh noise every pass over the unlabeled set.
    LexicalNoise { drop_prob: f64, swap_prob: f64, seed: u64 },
    /// Fixed paraphrases aligned with the unlabeled examples by position.
    External { texts: Vec<String> },
}

impl Augmentation {
    /// Aligns external pairs with `unlabeled`; every unlabeled example needs
    /// a pair.
    pub fn external(unlabeled: &[Example], pairs: &[AugmentedPair]) -> Result<Self> {
        let by_id: BTreeMap<&str, &str> = pairs
            .iter()
            .map(|p| (p.original.id.as_str(), p.augmented_text.as_str()))
            .collect();
        let mut texts = Vec::with_capacity(unlabeled.len());
        let mut missing = Vec::new();
        for e in unlabeled {
            match by_id.get(e.id.as_str()) {
                Some(t) => texts.push(String::from(*t)),
                None => missing.push(alloc::format!("unlabeled id {:?} has no pair", e.id)),
            }
        }
        if missing.is_empty() {
            Ok(Self::External { texts })
        } else {
            Err(Error::Linkage(missing))
        }
    }

    pub fn validate(&self, unlabeled: usize) -> Result<()> {
        match self {
            Self::LexicalNoise { drop_prob, swap_prob, .. } => {
                for p in [drop_prob, swap_prob] {
                    if !(0.0..=1.0).contains(p) {
                        return Err(Error::Config(alloc::format!("probability {p} outside [0, 1]")));
                    }
                }
                Ok(())
            }
            Self::External { texts } if texts.len() != unlabeled => Err(Error::Config(alloc::format!(
                "{} augmentations for {unlabeled} unlabeled examples",
                texts.len()
            ))),
            Self::External { .. } => Ok(()),
        }
    }

    /// Augmented text for unlabeled example `index` drawn during `epoch`.
    pub fn augment(&self, original: &str, index: usize, epoch: u64) -> String {
        match self {
            Self::LexicalNoise {
                drop_prob,
                swap_prob,
                seed,
            } => lexical_noise(original, *drop_prob, *swap_prob, noise_seed(*seed, epoch, index)),
            Self::External { texts } => texts[index].clone(),
        }
    }

    pub fn source(&self) -> AugmentSource {
        match self {
            Self::LexicalNoise { .. } => AugmentSource::LexicalNoise,
            Self::External { .. } => AugmentSource::External,
        }
    }
}
