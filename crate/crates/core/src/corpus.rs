//! Examples, label maps and seeded K-shot splits.
//!
//! A split shuffles the corpus once with the seeded generator (see
//! [`crate::rng`]) and then walks it in shuffled order, handing each example
//! of class `c` to the first bucket of `labeled -> unlabeled -> dev` whose
//! quota for `c` is not yet full. Labeled quotas are exactly `K` per class;
//! unlabeled and dev quotas are split evenly across classes, the remainder
//! going to the lowest class indices.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

const SPLIT_STREAM: u64 = 0x5711;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub label: Option<usize>,
}

impl Example {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Option<usize>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label,
        }
    }
}

/// Ordered class names; a name's position is its class index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", names.len())));
        }
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::Config(format!("duplicate class names in {names:?}")));
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }
}

/// Bucket sizes for a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// `K`, labeled examples per class.
    pub per_class: usize,
    /// `m`, unlabeled examples in total.
    pub unlabeled: usize,
    /// Dev examples in total.
    pub dev: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            per_class: 10,
            unlabeled: 3000,
            dev: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Labeled,
    Unlabeled,
    Dev,
}

/// One line of a split manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub bucket: Bucket,
}

/// True label of an unlabeled example, kept out of the training path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenLabel {
    pub id: String,
    pub label: usize,
}

/// Labeled / unlabeled / dev partition of a training corpus plus an
/// optional test set. Unlabeled examples carry `label: None`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub labeled: Vec<Example>,
    pub unlabeled: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
    pub seed: u64,
    pub per_class: usize,
    classes: usize,
    hidden: Vec<HiddenLabel>,
}

/// Even share of `total` for class `c` out of `classes`.
pub fn even_quota(total: usize, classes: usize, c: usize) -> usize {
    total / classes + usize::from(c < total % classes)
}

impl CorpusSplit {
    pub fn classes(&self) -> usize {
        self.classes
    }

    /// True labels of the unlabeled bucket, for audits only.
    pub fn hidden_labels(&self) -> &[HiddenLabel] {
        &self.hidden
    }

    pub fn with_test(mut self, test: Vec<Example>) -> Self {
        self.test = test;
        self
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        let entry = |bucket| move |e: &Example| ManifestEntry { id: e.id.clone(), bucket };
        self.labeled
            .iter()
            .map(entry(Bucket::Labeled))
            .chain(self.unlabeled.iter().map(entry(Bucket::Unlabeled)))
            .chain(self.dev.iter().map(entry(Bucket::Dev)))
            .collect()
    }

    /// Rebuilds a split from the corpus it was drawn from and its manifest.
    pub fn from_manifest(data: &[Example], classes: usize, manifest: &[ManifestEntry], seed: u64) -> Result<Self> {
        let index: BTreeMap<&str, &Example> = data.iter().map(|e| (e.id.as_str(), e)).collect();
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::Split(format!("manifest id {id:?} not in corpus")))
        };
        let mut split = CorpusSplit {
            labeled: Vec::new(),
            unlabeled: Vec::new(),
            dev: Vec::new(),
            test: Vec::new(),
            seed,
            per_class: 0,
            classes,
            hidden: Vec::new(),
        };
        for entry in manifest {
            let example = lookup(&entry.id)?.clone();
            match entry.bucket {
                Bucket::Labeled => split.labeled.push(example),
                Bucket::Dev => split.dev.push(example),
                Bucket::Unlabeled => {
                    if let Some(label) = example.label {
                        split.hidden.push(HiddenLabel {
                            id: example.id.clone(),
                            label,
                        });
                    }
                    split.unlabeled.push(Example { label: None, ..example });
                }
            }
        }
        split.per_class = split.labeled.len() / classes.max(1);
        Ok(split)
    }
}

/// Draws a K-shot split. Deterministic in `(data order, seed, spec)`.
pub fn make_split(data: &[Example], labels: &LabelMap, spec: SplitSpec, seed: u64) -> Result<CorpusSplit> {
    let classes = labels.len();
    let n = spec.per_class * classes;
    if spec.per_class == 0 {
        return Err(Error::Config(String::from("K must be at least 1")));
    }
    if n >= spec.unlabeled {
        return Err(Error::Config(format!(
            "labeled count {n} must be smaller than unlabeled count {}",
            spec.unlabeled
        )));
    }
    if n + spec.unlabeled + spec.dev > data.len() {
        return Err(Error::Split(format!(
            "need {} examples, corpus has {}",
            n + spec.unlabeled + spec.dev,
            data.len()
        )));
    }
    let mut ids = BTreeSet::new();
    for e in data {
        if !ids.insert(e.id.as_str()) {
            return Err(Error::Split(format!("duplicate id {:?}", e.id)));
        }
        match e.label {
            None => return Err(Error::Split(format!("example {:?} has no label", e.id))),
            Some(y) if y >= classes => {
                return Err(Error::Split(format!("example {:?} has label {y} outside {classes} classes", e.id)))
            }
            _ => {}
        }
    }

    let quota = |c: usize| {
        [
            spec.per_class,
            even_quota(spec.unlabeled, classes, c),
            even_quota(spec.dev, classes, c),
        ]
    };
    for c in 0..classes {
        let have = data.iter().filter(|e| e.label == Some(c)).count();
        let need: usize = quota(c).iter().sum();
        if have < need {
            return Err(Error::Split(format!(
                "class {:?} has {have} examples, split needs {need}",
                labels.name(c).unwrap_or("?")
            )));
        }
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    SeededRng::stream(seed, SPLIT_STREAM).shuffle(&mut order);

    let mut filled = alloc::vec![[0usize; 3]; classes];
    let mut split = CorpusSplit {
        labeled: Vec::new(),
        unlabeled: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
        seed,
        per_class: spec.per_class,
        classes,
        hidden: Vec::new(),
    };
    for idx in order {
        let example = &data[idx];
        let c = example.label.expect("checked above");
        let limits = quota(c);
        let Some(bucket) = (0..3).find(|&b| filled[c][b] < limits[b]) else {
            continue;
        };
        filled[c][bucket] += 1;
        match bucket {
            0 => split.labeled.push(example.clone()),
            1 => {
                split.hidden.push(HiddenLabel {
                    id: example.id.clone(),
                    label: c,
                });
                split.unlabeled.push(Example {
                    label: None,
                    ..example.clone()
                });
            }
            _ => split.dev.push(example.clone()),
        }
    }
    Ok(split)
}

/// One split per seed; seeds must be distinct.
pub fn three_seed_splits(data: &[Example], labels: &LabelMap, spec: SplitSpec, seeds: [u64; 3]) -> Result<Vec<CorpusSplit>> {
    seeded_splits(data, labels, spec, &seeds)
}

/// Like [`three_seed_splits`] for any number of distinct seeds.
pub fn seeded_splits(data: &[Example], labels: &LabelMap, spec: SplitSpec, seeds: &[u64]) -> Result<Vec<CorpusSplit>> {
    let unique: BTreeSet<u64> = seeds.iter().copied().collect();
    if unique.len() != seeds.len() {
        return Err(Error::Config(format!("seeds must be distinct, got {seeds:?}")));
    }
    seeds.iter().map(|&s| make_split(data, labels, spec, s)).collect()
}
