//! Hashed n-gram features and the two-layer MLP text encoder.
//!
//! Text is lowercased, split on whitespace, and every unigram and adjacent
//! bigram (joined by one space) is hashed with xxHash64 under
//! [`HASH_SEED`] into one of `F` buckets. The encoder maps the count vector
//! through `tanh(x W1 + b1) W2 + b2` to a pre-normalisation embedding `e`;
//! the contrastive losses use `z = e / |e|` and the classifier reads
//! `logits = e Wc + bc`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use crate::diff::{Graph, Tensor, Var};
use crate::error::{contract, Error, Result};
use crate::rng::SeededRng;

/// Seed passed to xxHash64 for feature hashing.
pub const HASH_SEED: u64 = 0;

/// Sparse storage of a dense nonnegative count vector of length `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    dim: usize,
    /// `(bucket, count)` sorted by bucket, counts strictly positive.
    entries: Vec<(usize, f64)>,
}

impl FeatureVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn get(&self, bucket: usize) -> f64 {
        self.entries
            .binary_search_by_key(&bucket, |e| e.0)
            .map_or(0.0, |i| self.entries[i].1)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }

    /// Multiplies every count by `factor` (which must be positive).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|&(i, v)| (i, v * factor)).collect(),
        }
    }

    fn add(&mut self, bucket: usize) {
        match self.entries.binary_search_by_key(&bucket, |e| e.0) {
            Ok(i) => self.entries[i].1 += 1.0,
            Err(i) => self.entries.insert(i, (bucket, 1.0)),
        }
    }
}

/// Hashes a token or bigram key to a bucket in `[0, dim)`.
pub fn bucket(key: &str, dim: usize, seed: u64) -> usize {
    (XxHash64::oneshot(seed, key.as_bytes()) % dim as u64) as usize
}

/// Feature hashing settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Featurizer {
    pub dim: usize,
    pub hash_seed: u64,
    /// Keep only the first `max_tokens` whitespace tokens; 0 keeps all.
    pub max_tokens: usize,
}

impl Featurizer {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            hash_seed: HASH_SEED,
            max_tokens: 0,
        }
    }

    pub fn featurize(&self, text: &str) -> FeatureVector {
        let lowered = text.to_lowercase();
        let mut tokens: Vec<&str> = lowered.split_whitespace().collect();
        if self.max_tokens > 0 {
            tokens.truncate(self.max_tokens);
        }
        let mut fv = FeatureVector::zeros(self.dim);
        for tok in &tokens {
            fv.add(bucket(tok, self.dim, self.hash_seed));
        }
        let mut key = String::new();
        for pair in tokens.windows(2) {
            key.clear();
            key.push_str(pair[0]);
            key.push(' ');
            key.push_str(pair[1]);
            fv.add(bucket(&key, self.dim, self.hash_seed));
        }
        fv
    }
}

/// Featurizes with the default hash seed and no truncation. `dim` must be
/// at least 2.
pub fn featurize(text: &str, dim: usize) -> FeatureVector {
    assert!(dim >= 2, "feature dimension must be at least 2");
    Featurizer::new(dim).featurize(text)
}

/// Layer sizes: features `F`, hidden `h`, embedding `d`, classes `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub features: usize,
    pub hidden: usize,
    pub embed: usize,
    pub classes: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self {
            features: 4096,
            hidden: 128,
            embed: 32,
            classes: 2,
        }
    }
}

/// Names of the parameter arrays, in storage order.
pub const PARAM_NAMES: [&str; 6] = ["w1", "b1", "w2", "b2", "wc", "bc"];

/// Encoder and classifier parameters, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub dims: EncoderDims,
    pub hash_seed: u64,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub wc: Vec<f64>,
    pub bc: Vec<f64>,
}

/// Graph handles of bound parameters.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub wc: Var,
    pub bc: Var,
}

impl ParamVars {
    pub fn all(&self) -> [Var; 6] {
        [self.w1, self.b1, self.w2, self.b2, self.wc, self.bc]
    }
}

/// Encoder outputs for a batch.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    /// Unit-norm embeddings, `rows x d`.
    pub z: Var,
    /// Class scores from the pre-normalisation embedding, `rows x C`.
    pub logits: Var,
}

fn glorot(rng: &mut SeededRng, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    (0..fan_in * fan_out).map(|_| rng.uniform_in(-limit, limit)).collect()
}

impl EncoderParams {
    /// Glorot-uniform weights, zero biases. Deterministic per seed.
    pub fn init(seed: u64, dims: EncoderDims) -> Result<Self> {
        let EncoderDims {
            features,
            hidden,
            embed,
            classes,
        } = dims;
        if features == 0 || hidden == 0 || embed == 0 || classes == 0 {
            return Err(contract!("encoder dimensions must be at least 1: {dims:?}"));
        }
        let mut rng = SeededRng::new(seed);
        Ok(Self {
            dims,
            hash_seed: HASH_SEED,
            w1: glorot(&mut rng, features, hidden),
            b1: vec![0.0; hidden],
            w2: glorot(&mut rng, hidden, embed),
            b2: vec![0.0; embed],
            wc: glorot(&mut rng, embed, classes),
            bc: vec![0.0; classes],
        })
    }

    pub fn featurizer(&self) -> Featurizer {
        Featurizer {
            dim: self.dims.features,
            hash_seed: self.hash_seed,
            max_tokens: 0,
        }
    }

    /// Shapes in [`PARAM_NAMES`] order.
    pub fn shapes(&self) -> [Vec<usize>; 6] {
        let EncoderDims {
            features: f,
            hidden: h,
            embed: d,
            classes: c,
        } = self.dims;
        [vec![f, h], vec![h], vec![h, d], vec![d], vec![d, c], vec![c]]
    }

    pub fn arrays(&self) -> [&Vec<f64>; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.wc, &self.bc]
    }

    pub fn arrays_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.wc,
            &mut self.bc,
        ]
    }

    /// Checks array lengths against the dims and that every value is finite.
    pub fn validate(&self) -> Result<()> {
        for ((name, shape), arr) in PARAM_NAMES.iter().zip(self.shapes()).zip(self.arrays()) {
            let expected: usize = shape.iter().product();
            if arr.len() != expected {
                return Err(Error::Shape {
                    op: name,
                    left: shape,
                    right: vec![arr.len()],
                });
            }
            if arr.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: name });
            }
        }
        Ok(())
    }

    /// Moves the parameters into `g` as leaves; `trainable` sets
    /// `requires_grad`. Use [`EncoderParams::reclaim`] to move them back.
    pub fn bind_owned(&mut self, g: &mut Graph, trainable: bool) -> ParamVars {
        let shapes = self.shapes();
        let mut vars = [None; 6];
        for ((slot, arr), shape) in vars.iter_mut().zip(self.arrays_mut()).zip(shapes) {
            let t = Tensor::new(shape, core::mem::take(arr)).expect("validated shapes");
            *slot = Some(g.leaf(if trainable { t.with_grad() } else { t }));
        }
        let [w1, b1, w2, b2, wc, bc] = vars.map(|v| v.expect("bound"));
        ParamVars { w1, b1, w2, b2, wc, bc }
    }

    /// Copies the parameters into `g` as leaves.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ParamVars {
        self.clone().bind_owned(g, trainable)
    }

    /// Takes the parameter arrays back from `g`, returning their gradients
    /// (empty when the leaves were not trainable or `backward` was not run).
    pub fn reclaim(&mut self, g: &mut Graph, vars: &ParamVars) -> [Vec<f64>; 6] {
        let mut grads: [Vec<f64>; 6] = Default::default();
        for ((arr, var), grad) in self.arrays_mut().into_iter().zip(vars.all()).zip(grads.iter_mut()) {
            let mut t = g.take(var);
            *grad = t.take_grad().unwrap_or_default();
            *arr = t.into_data();
        }
        grads
    }

    /// Records the forward pass for a batch of feature vectors.
    pub fn forward(&self, g: &mut Graph, vars: &ParamVars, batch: &[FeatureVector]) -> Result<Encoded> {
        encode_batch(g, vars, self.dims, batch)
    }

    /// Embedding and logits for one feature vector, without gradients.
    pub fn encode(&self, fv: &FeatureVector) -> Result<(Vec<f64>, Vec<f64>)> {
        let (z, logits) = self.encode_many(core::slice::from_ref(fv))?;
        Ok((z.into_data(), logits.into_data()))
    }

    /// Embeddings (`rows x d`) and logits (`rows x C`) without gradients.
    pub fn encode_many(&self, batch: &[FeatureVector]) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let out = self.forward(&mut g, &vars, batch)?;
        let z = g.value(out.z).clone();
        let logits = g.value(out.logits).clone();
        Ok((z, logits))
    }
}

/// Forward pass on already bound parameters.
pub fn encode_batch(g: &mut Graph, vars: &ParamVars, dims: EncoderDims, batch: &[FeatureVector]) -> Result<Encoded> {
    if batch.is_empty() {
        return Err(contract!("cannot encode an empty batch"));
    }
    if let Some(fv) = batch.iter().find(|fv| fv.dim != dims.features) {
        return Err(Error::Shape {
            op: "encode",
            left: vec![fv.dim],
            right: vec![dims.features],
        });
    }
    let rows = batch.iter().map(|fv| fv.entries.clone()).collect();
    let pre_hidden = g.sparse_matmul(rows, vars.w1)?;
    let pre_hidden = g.add_row_bias(pre_hidden, vars.b1)?;
    let hidden = g.tanh(pre_hidden);
    let embedding = g.matmul(hidden, vars.w2)?;
    let embedding = g.add_row_bias(embedding, vars.b2)?;
    let z = g.l2_normalize_floored(embedding);
    let logits = g.matmul(embedding, vars.wc)?;
    let logits = g.add_row_bias(logits, vars.bc)?;
    Ok(Encoded { z, logits })
}
