#![allow(dead_code)]

use semishot_core::diff::Tensor;
use semishot_core::rng::SeededRng;

pub fn unit_rows(rng: &mut SeededRng, n: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        data.extend(row.iter().map(|v| v / norm));
    }
    Tensor::matrix(n, d, data).unwrap()
}

pub fn uniform(rng: &mut SeededRng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.uniform_in(-scale, scale)).collect()).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Supervised contrastive loss written as the plain double sum.
pub fn naive_scl(z: &Tensor, labels: &[usize], tau: f64) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for i in 0..n {
        let n_yi = labels.iter().filter(|&&y| y == labels[i]).count();
        if n_yi < 2 {
            continue;
        }
        let mut denom = 0.0;
        for k in 0..n {
            if k != i {
                denom += (dot(z.row(i), z.row(k)) / tau).exp();
            }
        }
        let mut inner = 0.0;
        for j in 0..n {
            if j != i && labels[j] == labels[i] {
                inner += ((dot(z.row(i), z.row(j)) / tau).exp() / denom).ln();
            }
        }
        total -= inner / (n_yi - 1) as f64;
    }
    total
}

/// Contrastive consistency written out loop by loop: for every anchor the
/// negatives are the other originals, then the other augmentations.
pub fn naive_cc(orig: &Tensor, aug: &Tensor, tau: f64) -> f64 {
    let n = orig.shape()[0];
    let mut total = 0.0;
    for i in 0..n {
        let mut negatives: Vec<&[f64]> = Vec::new();
        for j in 0..n {
            if j != i {
                negatives.push(orig.row(j));
            }
        }
        for j in 0..n {
            if j != i {
                negatives.push(aug.row(j));
            }
        }
        let p_raw: Vec<f64> = negatives.iter().map(|v| (dot(orig.row(i), v) / tau).exp()).collect();
        let q_raw: Vec<f64> = negatives.iter().map(|v| (dot(aug.row(i), v) / tau).exp()).collect();
        let ps: f64 = p_raw.iter().sum();
        let qs: f64 = q_raw.iter().sum();
        let mut kl = 0.0;
        for k in 0..negatives.len() {
            let p = p_raw[k] / ps;
            let q = q_raw[k] / qs;
            if p > 0.0 {
                kl += p * (p / q).ln();
            }
        }
        total += kl;
    }
    total / n as f64
}

pub fn naive_consistency(orig: &Tensor, aug: &Tensor) -> f64 {
    let (n, c) = (orig.shape()[0], orig.shape()[1]);
    let mut total = 0.0;
    for i in 0..n {
        let ps: f64 = (0..c).map(|k| orig.row(i)[k].exp()).sum();
        let qs: f64 = (0..c).map(|k| aug.row(i)[k].exp()).sum();
        for k in 0..c {
            let p = orig.row(i)[k].exp() / ps;
            let q = aug.row(i)[k].exp() / qs;
            total += p * (p / q).ln();
        }
    }
    total / n as f64
}
