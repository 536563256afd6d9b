//! Randomised invariants of the primitives, losses and aggregation.

mod common;

use common::{naive_scl, unit_rows};
use proptest::prelude::*;
use semishot_core::diff::{log_softmax_row, softmax_row, Tensor};
use semishot_core::eval::aggregate;
use semishot_core::losses::{LabeledBatch, UnlabeledPairBatch};
use semishot_core::rng::SeededRng;

fn logits_row() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, 1..10)
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(x in logits_row(), tau in 0.01f64..5.0) {
        let mut p = vec![0.0; x.len()];
        softmax_row(&x, tau, &mut p);
        prop_assert!(p.iter().all(|v| *v >= 0.0 && v.is_finite()));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn softmax_ignores_constant_shift(x in logits_row(), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let mut p = vec![0.0; x.len()];
        let mut q = vec![0.0; x.len()];
        softmax_row(&x, 1.0, &mut p);
        softmax_row(&shifted, 1.0, &mut q);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn log_softmax_agrees_with_softmax(x in logits_row(), tau in 0.05f64..5.0) {
        let mut p = vec![0.0; x.len()];
        let mut lp = vec![0.0; x.len()];
        softmax_row(&x, tau, &mut p);
        log_softmax_row(&x, tau, &mut lp);
        for (a, b) in p.iter().zip(&lp) {
            prop_assert!(*b <= 1e-15);
            prop_assert!((a - b.exp()).abs() <= 1e-12);
        }
    }

    #[test]
    fn kl_losses_never_negative(seed in any::<u64>(), n in 2usize..8, d in 1usize..8, scale in 0.1f64..30.0) {
        let mut rng = SeededRng::new(seed);
        let o = unit_rows(&mut rng, n, d);
        let a = unit_rows(&mut rng, n, d);
        let ol = common::uniform(&mut rng, n, 3, scale);
        let al = common::uniform(&mut rng, n, 3, scale);
        let batch = UnlabeledPairBatch::new(o, a, ol, al).unwrap();
        prop_assert!(batch.consistency().unwrap() >= -1e-12);
        prop_assert!(batch.cc(0.1).unwrap() >= -1e-12);
    }

    #[test]
    fn scl_is_permutation_invariant(seed in any::<u64>(), n in 2usize..9, d in 1usize..6) {
        let mut rng = SeededRng::new(seed);
        let z = unit_rows(&mut rng, n, d);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let zp = Tensor::matrix(n, d, order.iter().flat_map(|&i| z.row(i).to_vec()).collect()).unwrap();
        let lp: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let logits = Tensor::zeros(vec![n, 3]);
        let a = LabeledBatch::new(z.clone(), logits.clone(), labels.clone()).unwrap().scl(0.1).unwrap();
        let b = LabeledBatch::new(zp, logits, lp).unwrap().scl(0.1).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        prop_assert!((a - naive_scl(&z, &labels, 0.1)).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn aggregate_is_permutation_invariant(accs in prop::collection::vec(0.0f64..100.0, 2..8), seed in any::<u64>()) {
        let mut shuffled = accs.clone();
        SeededRng::new(seed).shuffle(&mut shuffled);
        let a = aggregate(&accs, "").unwrap();
        let b = aggregate(&shuffled, "").unwrap();
        prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        prop_assert_eq!(a.sem.to_bits(), b.sem.to_bits());
        prop_assert!(a.sem >= 0.0);
        let lo = accs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(a.mean >= lo && a.mean <= hi);
    }
}
