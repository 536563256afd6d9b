//! Central finite-difference checks of analytic gradients.
//!
//! The numeric side only ever evaluates forward passes, so it shares no code
//! with the backward rules it checks.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::diff::{Graph, Tensor, Var};
use crate::encoder::{encode_batch, EncoderDims, EncoderParams, FeatureVector, PARAM_NAMES};
use crate::error::Result;
use crate::losses::{cc_loss, cc_negative_rows, ce_loss, consistency_loss, scl_loss, UnlabeledPairBatch};
use crate::rng::SeededRng;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Pass threshold on the maximum relative error.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so entries whose true gradient
/// is zero are judged on absolute error.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Outcome of checking one function at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Maximum relative error per input tensor.
    pub per_input: Vec<f64>,
    pub max_rel_error: f64,
    pub entries_checked: usize,
}

/// Compares the analytic gradient of the scalar `f(inputs)` against central
/// differences with step `h`, for every element of every input.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check_against(inputs, h, &f, &f)
}

/// Like [`check`], but differences `reference` numerically while taking the
/// analytic gradient from `f`. Used where `f` detaches part of itself and
/// `reference` spells out the detached quantity as a constant frozen at
/// `inputs`.
pub fn check_against<F, R>(inputs: &[Tensor], h: f64, f: F, reference: R) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    R: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let f = &f;
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone().with_grad())).collect();
    let root = f(&mut g, &vars)?;
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).expect("leaf grad").to_vec()).collect();

    let eval = |point: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = point.iter().map(|t| g.constant(t.clone())).collect();
        let root = reference(&mut g, &vars)?;
        Ok(g.scalar(root))
    };

    let mut per_input = vec![0.0f64; inputs.len()];
    let mut point = inputs.to_vec();
    let mut entries = 0;
    for (t, grads) in analytic.iter().enumerate() {
        for (k, &grad) in grads.iter().enumerate() {
            let orig = point[t].data()[k];
            point[t].data_mut()[k] = orig + h;
            let plus = eval(&point)?;
            point[t].data_mut()[k] = orig - h;
            let minus = eval(&point)?;
            point[t].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            per_input[t] = per_input[t].max(relative_error(grad, numeric));
            entries += 1;
        }
    }
    let max_rel_error = per_input.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_input,
        max_rel_error,
        entries_checked: entries,
    })
}

/// One row of the gradient suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub instances: usize,
    pub entries_checked: usize,
    pub max_rel_error: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= FD_TOLERANCE
    }
}

fn random_tensor(rng: &mut SeededRng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_in(-2.0, 2.0)).collect()).expect("shape")
}

fn random_labels(rng: &mut SeededRng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.below(classes)).collect()
}

fn accumulate(name: &str, reports: &[GradCheckReport]) -> SuiteResult {
    SuiteResult {
        name: String::from(name),
        instances: reports.len(),
        entries_checked: reports.iter().map(|r| r.entries_checked).sum(),
        max_rel_error: reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max),
    }
}

/// Gradient suite over `instances` random problems per loss (batch size
/// `N <= 8`, width `d <= 8`, classes `C <= 4`, inputs uniform in [-2, 2]).
/// Contrastive terms see raw rows that are normalised inside the checked
/// function, so the normalisation backward is covered as well.
pub fn run_suite(seed: u64, instances: usize) -> Result<Vec<SuiteResult>> {
    let mut rng = SeededRng::new(seed);
    let tau_scl = 0.1;
    let tau_cc = 0.1;
    let mut ce = Vec::new();
    let mut scl = Vec::new();
    let mut con = Vec::new();
    let mut cc = Vec::new();
    let mut enc = Vec::new();
    for _ in 0..instances {
        let n = 2 + rng.below(7);
        let d = 2 + rng.below(7);
        let c = 2 + rng.below(3);

        let labels = random_labels(&mut rng, n, c);
        let logits = random_tensor(&mut rng, vec![n, c]);
        ce.push(check(&[logits], FD_STEP, |g, v| ce_loss(g, v[0], &labels))?);

        let mut labels = random_labels(&mut rng, n, c);
        // guarantee at least one positive pair
        labels[1] = labels[0];
        let raw = random_tensor(&mut rng, vec![n, d]);
        scl.push(check(&[raw], FD_STEP, |g, v| {
            let z = g.l2_normalize(v[0])?;
            scl_loss(g, z, &labels, tau_scl)
        })?);

        let orig = random_tensor(&mut rng, vec![n, c]);
        let aug = random_tensor(&mut rng, vec![n, c]);
        // the original side is detached, so only the augmented logits are
        // differentiated
        con.push(check(&[aug], FD_STEP, |g, v| {
            let o = g.constant(orig.clone());
            consistency_loss(g, o, v[0])
        })?);

        let orig = random_tensor(&mut rng, vec![n, d]);
        let aug = random_tensor(&mut rng, vec![n, d]);
        cc.push(check(&[orig.clone(), aug.clone()], FD_STEP, |g, v| {
            let zo = g.l2_normalize(v[0])?;
            let za = g.l2_normalize(v[1])?;
            cc_loss(g, zo, za, tau_cc, false)
        })?);
        // with a detached target the original-view distributions are
        // frozen at the evaluation point
        let frozen = frozen_targets(&orig, &aug, tau_cc)?;
        cc.push(check_against(
            &[orig, aug],
            FD_STEP,
            |g, v| {
                let zo = g.l2_normalize(v[0])?;
                let za = g.l2_normalize(v[1])?;
                cc_loss(g, zo, za, tau_cc, true)
            },
            |g, v| cc_with_fixed_target(g, v[0], v[1], &frozen, tau_cc),
        )?);

        enc.push(check_encoder(&mut rng, n, c)?);
    }
    Ok(vec![
        accumulate("ce", &ce),
        accumulate("scl", &scl),
        accumulate("con", &con),
        accumulate("cc", &cc),
        accumulate("encoder", &enc),
    ])
}

fn normalized(raw: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(raw.clone());
    let z = g.l2_normalize(x)?;
    Ok(g.value(z).clone())
}

fn frozen_targets(orig: &Tensor, aug: &Tensor, tau: f64) -> Result<Tensor> {
    let (n, _) = orig.rows_cols();
    let zeros = Tensor::zeros(vec![n, 1]);
    let batch = UnlabeledPairBatch::new(normalized(orig)?, normalized(aug)?, zeros.clone(), zeros)?;
    let mut data = Vec::new();
    for i in 0..n {
        data.extend(batch.cc_distributions(i, tau)?.0);
    }
    Tensor::matrix(n, 2 * (n - 1), data)
}

/// Contrastive consistency with the target distributions supplied as data.
fn cc_with_fixed_target(g: &mut Graph, orig_raw: Var, aug_raw: Var, target: &Tensor, tau: f64) -> Result<Var> {
    let n = g.value(orig_raw).shape()[0];
    let zo = g.l2_normalize(orig_raw)?;
    let za = g.l2_normalize(aug_raw)?;
    let stacked = g.concat_rows(zo, za)?;
    let stacked_t = g.transpose(stacked)?;
    let sims = g.matmul(za, stacked_t)?;
    let indices = (0..n)
        .flat_map(|i| cc_negative_rows(n, i).into_iter().map(move |k| i * 2 * n + k))
        .collect();
    let neg = g.gather(sims, indices, vec![n, 2 * (n - 1)])?;
    let log_q = g.log_softmax(neg, tau)?;
    let p = g.constant(target.clone());
    let kl = g.kl_div(p, log_q)?;
    Ok(g.scale(kl, 1.0 / n as f64))
}

fn check_encoder(rng: &mut SeededRng, n: usize, classes: usize) -> Result<GradCheckReport> {
    let dims = EncoderDims {
        features: 12,
        hidden: 2 + rng.below(5),
        embed: 2 + rng.below(7),
        classes,
    };
    let mut params = EncoderParams::init(rng.next_u64(), dims)?;
    for arr in params.arrays_mut() {
        for v in arr.iter_mut() {
            *v = rng.uniform_in(-2.0, 2.0) * 0.5;
        }
    }
    let featurizer = params.featurizer();
    let batch: Vec<FeatureVector> = (0..n)
        .map(|_| {
            let words: Vec<&str> = (0..4).map(|_| ["a", "b", "c", "d", "e", "f"][rng.below(6)]).collect();
            featurizer.featurize(&words.join(" "))
        })
        .collect();
    let weights: Vec<f64> = (0..n * (classes + dims.embed)).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let inputs: Vec<Tensor> = params
        .shapes()
        .into_iter()
        .zip(params.arrays())
        .map(|(shape, arr)| Tensor::new(shape, arr.clone()).expect("shape"))
        .collect();
    debug_assert_eq!(inputs.len(), PARAM_NAMES.len());
    check(&inputs, FD_STEP, |g, v| {
        let vars = crate::encoder::ParamVars {
            w1: v[0],
            b1: v[1],
            w2: v[2],
            b2: v[3],
            wc: v[4],
            bc: v[5],
        };
        let out = encode_batch(g, &vars, dims, &batch)?;
        // random linear read-out of both heads
        let (nl, nz) = (n * classes, n * dims.embed);
        let a = g.contract(out.logits, (0..nl).map(|i| (i, weights[i])).collect())?;
        let b = g.contract(out.z, (0..nz).map(|i| (i, weights[nl + i])).collect())?;
        g.weighted_sum(&[(a, 1.0), (b, 1.0)])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn check_quadratic() {
        let x = Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        let report = check(&[x], FD_STEP, |g, v| {
            let xt = g.transpose(v[0])?;
            let sq = g.matmul(v[0], xt)?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-8);
        assert_eq!(report.entries_checked, 3);
    }
}
