//! The four training losses: cross-entropy, supervised contrastive,
//! prediction consistency and contrastive consistency.
//!
//! Each loss has a graph-level builder (`*_loss`) that records the
//! computation on a [`Graph`] so gradients can flow, and a value-level
//! convenience on [`LabeledBatch`] / [`UnlabeledPairBatch`].

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diff::{log_softmax_row, softmax_row, Graph, Tensor, Var};
use crate::error::{contract, Error, Result};

/// Temperatures and term weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau_scl: f64,
    pub tau_cc: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Treat the original-view distribution of the contrastive-consistency
    /// term as a fixed target. When false, gradients flow through both sides.
    pub cc_stop_grad: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_scl: 0.03,
            tau_cc: 0.1,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            cc_stop_grad: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("tau_scl", self.tau_scl), ("tau_cc", self.tau_cc)] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(alloc::format!("{name} must be positive, got {t}")));
            }
        }
        for (name, w) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(alloc::format!("{name} must be nonnegative, got {w}")));
            }
        }
        Ok(())
    }
}

fn matrix_dims(g: &Graph, v: Var, what: &str) -> Result<(usize, usize)> {
    let shape = g.value(v).shape();
    if shape.len() != 2 {
        return Err(contract!("{what} must be a matrix, got shape {shape:?}"));
    }
    Ok((shape[0], shape[1]))
}

/// Mean negative log-likelihood of the labels under `softmax(logits)`.
pub fn ce_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let (n, c) = matrix_dims(g, logits, "logits")?;
    if n == 0 || labels.len() != n {
        return Err(contract!("ce_loss: {n} logit rows for {} labels", labels.len()));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= c) {
        return Err(contract!("ce_loss: label {y} out of range for {c} classes"));
    }
    let log_probs = g.log_softmax(logits, 1.0)?;
    let weight = -1.0 / n as f64;
    let terms = labels.iter().enumerate().map(|(i, &y)| (i * c + y, weight)).collect();
    g.contract(log_probs, terms)
}

/// Position of column `j` in row `i` once the diagonal entry is removed.
fn off_diagonal_position(i: usize, j: usize) -> usize {
    if j < i {
        j
    } else {
        j - 1
    }
}

/// Supervised contrastive loss over unit embeddings `z` (N x d).
///
/// Summed over anchors. For anchor `i` the candidates are every `k != i`;
/// each same-class `j != i` contributes
/// `-log softmax_k(z_i . z_k / tau)[j] / (N_{y_i} - 1)`. Anchors whose class
/// appears once in the batch contribute nothing.
pub fn scl_loss(g: &mut Graph, z: Var, labels: &[usize], tau: f64) -> Result<Var> {
    let (n, _) = matrix_dims(g, z, "embeddings")?;
    if n < 2 {
        return Err(contract!("scl_loss needs at least 2 examples, got {n}"));
    }
    if labels.len() != n {
        return Err(contract!("scl_loss: {n} embeddings for {} labels", labels.len()));
    }
    let zt = g.transpose(z)?;
    let sims = g.matmul(z, zt)?;
    let indices = (0..n)
        .flat_map(|i| (0..n).filter(move |&k| k != i).map(move |k| i * n + k))
        .collect();
    let off_diag = g.gather(sims, indices, vec![n, n - 1])?;
    let log_probs = g.log_softmax(off_diag, tau)?;

    let mut terms = Vec::new();
    for i in 0..n {
        let same = labels.iter().filter(|&&y| y == labels[i]).count();
        if same < 2 {
            continue;
        }
        let weight = -1.0 / (same - 1) as f64;
        for j in (0..n).filter(|&j| j != i && labels[j] == labels[i]) {
            terms.push((i * (n - 1) + off_diagonal_position(i, j), weight));
        }
    }
    g.contract(log_probs, terms)
}

/// Batch mean of `KL(softmax(orig) || softmax(aug))` with the original side
/// detached from the graph.
pub fn consistency_loss(g: &mut Graph, orig_logits: Var, aug_logits: Var) -> Result<Var> {
    let (n, c) = matrix_dims(g, orig_logits, "original logits")?;
    let aug_dims = matrix_dims(g, aug_logits, "augmented logits")?;
    if (n, c) != aug_dims || n == 0 {
        return Err(Error::Shape {
            op: "consistency_loss",
            left: vec![n, c],
            right: vec![aug_dims.0, aug_dims.1],
        });
    }
    let target = g.stop_gradient(orig_logits);
    let p = g.softmax(target, 1.0)?;
    let log_q = g.log_softmax(aug_logits, 1.0)?;
    let kl = g.kl_div(p, log_q)?;
    Ok(g.scale(kl, 1.0 / n as f64))
}

/// Rows of the stacked `[originals; augmentations]` matrix that act as
/// negatives for anchor `i`: every original except `i` in ascending order,
/// then every augmentation except `i` in ascending order.
pub fn cc_negative_rows(n: usize, i: usize) -> Vec<usize> {
    (0..n)
        .filter(|&j| j != i)
        .chain((0..n).filter(|&j| j != i).map(|j| n + j))
        .collect()
}

/// Contrastive-consistency loss: batch mean over anchors of `KL(P_i || Q_i)`
/// where `P_i` / `Q_i` are the temperature-scaled similarity distributions
/// of the original / augmented view of example `i` over its `2(N-1)`
/// negatives.
pub fn cc_loss(g: &mut Graph, orig_z: Var, aug_z: Var, tau: f64, stop_grad_target: bool) -> Result<Var> {
    let (n, d) = matrix_dims(g, orig_z, "original embeddings")?;
    let aug_dims = matrix_dims(g, aug_z, "augmented embeddings")?;
    if (n, d) != aug_dims {
        return Err(Error::Shape {
            op: "cc_loss",
            left: vec![n, d],
            right: vec![aug_dims.0, aug_dims.1],
        });
    }
    if n < 2 {
        return Err(contract!("cc_loss needs at least 2 pairs, got {n}"));
    }
    let stacked = g.concat_rows(orig_z, aug_z)?;
    let stacked_t = g.transpose(stacked)?;
    let orig_sims = g.matmul(orig_z, stacked_t)?;
    let aug_sims = g.matmul(aug_z, stacked_t)?;

    let width = 2 * n;
    let indices: Vec<usize> = (0..n)
        .flat_map(|i| cc_negative_rows(n, i).into_iter().map(move |k| i * width + k))
        .collect();
    let shape = vec![n, 2 * (n - 1)];
    let orig_neg = g.gather(orig_sims, indices.clone(), shape.clone())?;
    let aug_neg = g.gather(aug_sims, indices, shape)?;

    let orig_neg = if stop_grad_target {
        g.stop_gradient(orig_neg)
    } else {
        orig_neg
    };
    let p = g.softmax(orig_neg, tau)?;
    let log_q = g.log_softmax(aug_neg, tau)?;
    let kl = g.kl_div(p, log_q)?;
    Ok(g.scale(kl, 1.0 / n as f64))
}

fn check_unit_rows(t: &Tensor, what: &str) -> Result<()> {
    let (rows, _) = t.rows_cols();
    for r in 0..rows {
        let norm2: f64 = t.row(r).iter().map(|v| v * v).sum();
        if (libm::sqrt(norm2) - 1.0).abs() > 1e-8 {
            return Err(contract!("{what} row {r} is not unit norm"));
        }
    }
    Ok(())
}

/// Labeled examples already pushed through the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    embeddings: Tensor,
    logits: Tensor,
    labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(embeddings: Tensor, logits: Tensor, labels: Vec<usize>) -> Result<Self> {
        let (n, _) = embeddings.rows_cols();
        let (ln, c) = logits.rows_cols();
        if embeddings.shape().len() != 2 || logits.shape().len() != 2 || ln != n || labels.len() != n {
            return Err(Error::Shape {
                op: "labeled_batch",
                left: embeddings.shape().to_vec(),
                right: logits.shape().to_vec(),
            });
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= c) {
            return Err(contract!("label {y} out of range for {c} classes"));
        }
        check_unit_rows(&embeddings, "embedding")?;
        Ok(Self {
            embeddings,
            logits,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn logits(&self) -> &Tensor {
        &self.logits
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ce(&self) -> Result<f64> {
        let mut g = Graph::new();
        let logits = g.constant(self.logits.clone());
        let loss = ce_loss(&mut g, logits, &self.labels)?;
        Ok(g.scalar(loss))
    }

    pub fn scl(&self, tau: f64) -> Result<f64> {
        let mut g = Graph::new();
        let z = g.constant(self.embeddings.clone());
        let loss = scl_loss(&mut g, z, &self.labels, tau)?;
        Ok(g.scalar(loss))
    }
}

/// Unlabeled examples and their augmentations, paired by row.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledPairBatch {
    orig_embeddings: Tensor,
    aug_embeddings: Tensor,
    orig_logits: Tensor,
    aug_logits: Tensor,
}

impl UnlabeledPairBatch {
    pub fn new(
        orig_embeddings: Tensor,
        aug_embeddings: Tensor,
        orig_logits: Tensor,
        aug_logits: Tensor,
    ) -> Result<Self> {
        if orig_embeddings.shape() != aug_embeddings.shape()
            || orig_logits.shape() != aug_logits.shape()
            || orig_embeddings.shape().len() != 2
            || orig_logits.shape().len() != 2
            || orig_embeddings.shape()[0] != orig_logits.shape()[0]
        {
            return Err(Error::Shape {
                op: "unlabeled_pair_batch",
                left: orig_embeddings.shape().to_vec(),
                right: aug_embeddings.shape().to_vec(),
            });
        }
        check_unit_rows(&orig_embeddings, "original embedding")?;
        check_unit_rows(&aug_embeddings, "augmented embedding")?;
        Ok(Self {
            orig_embeddings,
            aug_embeddings,
            orig_logits,
            aug_logits,
        })
    }

    pub fn len(&self) -> usize {
        self.orig_embeddings.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn orig_embeddings(&self) -> &Tensor {
        &self.orig_embeddings
    }

    pub fn aug_embeddings(&self) -> &Tensor {
        &self.aug_embeddings
    }

    /// `(P_i, Q_i)` for anchor `i`, each over the `2(N-1)` negatives in
    /// [`cc_negative_rows`] order.
    pub fn cc_distributions(&self, i: usize, tau: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.len();
        if n < 2 {
            return Err(contract!("contrastive consistency needs at least 2 pairs, got {n}"));
        }
        if i >= n {
            return Err(contract!("anchor {i} out of range for {n} pairs"));
        }
        if tau.is_nan() || tau <= 0.0 {
            return Err(contract!("temperature must be positive, got {tau}"));
        }
        let negatives = cc_negative_rows(n, i);
        let row_of = |k: usize| {
            if k < n {
                self.orig_embeddings.row(k)
            } else {
                self.aug_embeddings.row(k - n)
            }
        };
        let sims = |anchor: &[f64]| -> Vec<f64> {
            negatives
                .iter()
                .map(|&k| anchor.iter().zip(row_of(k)).map(|(a, b)| a * b).sum())
                .collect()
        };
        let orig_sims = sims(self.orig_embeddings.row(i));
        let aug_sims = sims(self.aug_embeddings.row(i));
        let mut p = vec![0.0; negatives.len()];
        let mut q = vec![0.0; negatives.len()];
        softmax_row(&orig_sims, tau, &mut p);
        softmax_row(&aug_sims, tau, &mut q);
        Ok((p, q))
    }

    pub fn consistency(&self) -> Result<f64> {
        let mut g = Graph::new();
        let o = g.constant(self.orig_logits.clone());
        let a = g.constant(self.aug_logits.clone());
        let loss = consistency_loss(&mut g, o, a)?;
        Ok(g.scalar(loss))
    }

    pub fn cc(&self, tau: f64) -> Result<f64> {
        let mut g = Graph::new();
        let o = g.constant(self.orig_embeddings.clone());
        let a = g.constant(self.aug_embeddings.clone());
        let loss = cc_loss(&mut g, o, a, tau, true)?;
        Ok(g.scalar(loss))
    }
}

/// `log softmax` of a single row; exposed for callers that need per-row
/// probabilities without building a graph.
pub fn log_probabilities(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    log_softmax_row(logits, 1.0, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use core::f64::consts::LN_2;

    fn unit_rows(rng: &mut SeededRng, n: usize, d: usize) -> Tensor {
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let row: Vec<f64> = (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let norm = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>());
            data.extend(row.iter().map(|v| v / norm));
        }
        Tensor::matrix(n, d, data).unwrap()
    }

    #[test]
    fn ce_uniform_is_ln2() {
        let batch = LabeledBatch::new(
            Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::matrix(2, 2, vec![0.0; 4]).unwrap(),
            vec![0, 1],
        )
        .unwrap();
        assert!((batch.ce().unwrap() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn ce_large_margin_is_zero() {
        let batch = LabeledBatch::new(
            Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap(),
            Tensor::matrix(1, 2, vec![1000.0, 0.0]).unwrap(),
            vec![0],
        )
        .unwrap();
        assert!(batch.ce().unwrap().abs() < 1e-12);
    }

    #[test]
    fn ce_label_out_of_range() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::zeros(vec![1, 2]));
        assert!(matches!(ce_loss(&mut g, logits, &[2]), Err(Error::Contract(_))));
    }

    #[test]
    fn scl_pair_of_same_class_is_zero() {
        let mut rng = SeededRng::new(1);
        let z = unit_rows(&mut rng, 2, 3);
        let batch = LabeledBatch::new(z, Tensor::zeros(vec![2, 2]), vec![1, 1]).unwrap();
        assert_eq!(batch.scl(0.1).unwrap(), 0.0);
    }

    #[test]
    fn scl_all_singletons_is_zero() {
        let mut rng = SeededRng::new(2);
        let z = unit_rows(&mut rng, 3, 4);
        let batch = LabeledBatch::new(z, Tensor::zeros(vec![3, 3]), vec![0, 1, 2]).unwrap();
        assert_eq!(batch.scl(0.1).unwrap(), 0.0);
    }

    #[test]
    fn scl_needs_two_examples() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        assert!(scl_loss(&mut g, z, &[0], 0.1).is_err());
    }

    #[test]
    fn scl_drops_when_positive_pair_rotates_closer() {
        let angle = |t: f64| [libm::cos(t), libm::sin(t)];
        let loss_at = |gap: f64| {
            let rows = [angle(0.0), angle(gap), angle(2.0), angle(2.5)];
            let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
            LabeledBatch::new(Tensor::matrix(4, 2, data).unwrap(), Tensor::zeros(vec![4, 2]), vec![0, 0, 1, 1])
                .unwrap()
                .scl(0.1)
                .unwrap()
        };
        assert!(loss_at(0.2) < loss_at(0.8));
    }

    #[test]
    fn consistency_closed_forms() {
        let same = Tensor::matrix(2, 3, vec![0.1, -0.3, 2.0, 1.0, 0.0, 0.5]).unwrap();
        let z = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let batch = UnlabeledPairBatch::new(z.clone(), z.clone(), same.clone(), same).unwrap();
        assert!(batch.consistency().unwrap().abs() <= 1e-12);

        let one_hot = Tensor::matrix(1, 2, vec![1000.0, 0.0]).unwrap();
        let uniform = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let z1 = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let batch = UnlabeledPairBatch::new(z1.clone(), z1, one_hot, uniform).unwrap();
        assert!((batch.consistency().unwrap() - LN_2).abs() < 1e-12);
    }

    #[test]
    fn consistency_blocks_gradient_to_original() {
        let mut g = Graph::new();
        let orig = g.leaf(Tensor::matrix(2, 3, vec![0.3, -1.0, 0.2, 1.5, 0.1, -0.4]).unwrap().with_grad());
        let aug = g.leaf(Tensor::matrix(2, 3, vec![0.0, 0.4, -0.2, 0.5, 0.9, 0.1]).unwrap().with_grad());
        let loss = consistency_loss(&mut g, orig, aug).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(orig).unwrap().iter().all(|v| v.to_bits() == 0));
        assert!(g.grad(aug).unwrap().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn cc_two_pairs_have_two_negatives() {
        let mut rng = SeededRng::new(4);
        let batch = UnlabeledPairBatch::new(
            unit_rows(&mut rng, 2, 3),
            unit_rows(&mut rng, 2, 3),
            Tensor::zeros(vec![2, 2]),
            Tensor::zeros(vec![2, 2]),
        )
        .unwrap();
        let (p, q) = batch.cc_distributions(0, 0.1).unwrap();
        assert_eq!((p.len(), q.len()), (2, 2));
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn cc_equal_views_give_equal_distributions() {
        let mut rng = SeededRng::new(5);
        let z = unit_rows(&mut rng, 4, 3);
        let batch =
            UnlabeledPairBatch::new(z.clone(), z, Tensor::zeros(vec![4, 2]), Tensor::zeros(vec![4, 2])).unwrap();
        for i in 0..4 {
            let (p, q) = batch.cc_distributions(i, 0.1).unwrap();
            for (a, b) in p.iter().zip(&q) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        assert!(batch.cc(0.1).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn cc_needs_two_pairs() {
        let z = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let batch =
            UnlabeledPairBatch::new(z.clone(), z, Tensor::zeros(vec![1, 2]), Tensor::zeros(vec![1, 2])).unwrap();
        assert!(batch.cc_distributions(0, 0.1).is_err());
        assert!(batch.cc(0.1).is_err());
    }

    #[test]
    fn negative_rows_order() {
        assert_eq!(cc_negative_rows(3, 1), vec![0, 2, 3, 5]);
    }

    #[test]
    fn batch_rejects_non_unit_embeddings() {
        let z = Tensor::matrix(1, 2, vec![2.0, 0.0]).unwrap();
        assert!(LabeledBatch::new(z, Tensor::zeros(vec![1, 2]), vec![0]).is_err());
    }

    #[test]
    fn loss_config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        let bad = LossConfig { tau_cc: 0.0, ..LossConfig::default() };
        assert!(bad.validate().is_err());
        let bad = LossConfig { lambda2: -1.0, ..LossConfig::default() };
        assert!(bad.validate().is_err());
    }
}
