//! Trainer behaviour: determinism, ablation limits, loss log consistency.

use semishot_core::corpus::make_split;
use semishot_core::diff::Graph;
use semishot_core::encoder::{encode_batch, EncoderParams};
use semishot_core::losses::ce_loss;
use semishot_core::rng::SeededRng;
use semishot_core::synth::{self, generate, SynthSpec};
use semishot_core::trainer::{
    adam_step, alpha_schedule, lr_schedule, total_loss, train, AdamState, BatchSampler, TrainConfig, INIT_STREAM,
    LABELED_STREAM,
};
use semishot_core::{corpus::CorpusSplit, Error};

fn small_setup(seed: u64) -> (CorpusSplit, TrainConfig) {
    let corpus = generate(&SynthSpec::default(), 3).unwrap();
    let split = make_split(&corpus.pool, &corpus.labels, synth::SynthSpec::default().split_spec(), seed)
        .unwrap()
        .with_test(corpus.test);
    let cfg = TrainConfig {
        max_steps: 40,
        features: 256,
        hidden: 16,
        embed: 8,
        eval_every: 10,
        ..synth::train_config(seed)
    };
    (split, cfg)
}

#[test]
fn same_seed_gives_bitwise_identical_runs() {
    let (split, cfg) = small_setup(1);
    let aug = synth::augmentation(1);
    let a = train(&split, &aug, &cfg).unwrap();
    let b = train(&split, &aug, &cfg).unwrap();
    assert_eq!(a.steps.len(), b.steps.len());
    for (x, y) in a.steps.iter().zip(&b.steps) {
        assert_eq!(x.l_total.to_bits(), y.l_total.to_bits());
    }
    for (x, y) in a.final_params.arrays().iter().zip(b.final_params.arrays()) {
        assert!(x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    assert_eq!(a.best.step, b.best.step);
}

#[test]
fn zero_weights_reduce_to_plain_cross_entropy_training() {
    let (split, mut cfg) = small_setup(2);
    cfg.loss.lambda1 = 0.0;
    cfg.loss.lambda2 = 0.0;
    cfg.loss.lambda3 = 0.0;
    let outcome = train(&split, &synth::augmentation(2), &cfg).unwrap();
    assert!(outcome.steps.iter().all(|s| s.l_scl.is_none() && s.l_con.is_none() && s.l_cc.is_none()));

    // independent supervised loop over the same generators
    let featurizer = cfg.featurizer();
    let feats: Vec<_> = split.labeled.iter().map(|e| featurizer.featurize(&e.text)).collect();
    let labels: Vec<usize> = split.labeled.iter().map(|e| e.label.unwrap()).collect();
    let dims = cfg.dims(2);
    let mut params = EncoderParams::init(SeededRng::stream(cfg.seed, INIT_STREAM).next_u64(), dims).unwrap();
    let sizes: Vec<usize> = params.arrays().iter().map(|a| a.len()).collect();
    let mut state = AdamState::new(&sizes);
    let mut sampler = BatchSampler::new(feats.len(), cfg.labeled_batch, SeededRng::stream(cfg.seed, LABELED_STREAM));
    for t in 0..cfg.max_steps {
        let picks = sampler.next_batch();
        let batch: Vec<_> = picks.iter().map(|p| feats[p.0].clone()).collect();
        let ys: Vec<usize> = picks.iter().map(|p| labels[p.0]).collect();
        let mut g = Graph::new();
        let vars = params.bind(&mut g, true);
        let enc = encode_batch(&mut g, &vars, dims, &batch).unwrap();
        let loss = ce_loss(&mut g, enc.logits, &ys).unwrap();
        assert_eq!(g.scalar(loss).to_bits(), outcome.steps[t].l_ce.to_bits(), "step {t}");
        g.backward(loss).unwrap();
        let grads: Vec<Vec<f64>> = vars.all().iter().map(|v| g.grad(*v).unwrap().to_vec()).collect();
        let lr = lr_schedule(t, cfg.max_steps, cfg.warmup_fraction, cfg.peak_lr).unwrap();
        adam_step(
            &mut params.arrays_mut(),
            &grads,
            &[true, false, true, false, true, false],
            &mut state,
            lr,
            cfg.weight_decay,
            &cfg.adam,
        )
        .unwrap();
    }
    for (x, y) in params.arrays().iter().zip(outcome.final_params.arrays()) {
        assert!(x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn logged_total_reconstructs_from_components() {
    let (split, cfg) = small_setup(3);
    let outcome = train(&split, &synth::augmentation(3), &cfg).unwrap();
    for s in &outcome.steps {
        assert_eq!(s.alpha, alpha_schedule(s.step, cfg.max_steps).unwrap());
        assert_eq!(s.lr, lr_schedule(s.step, cfg.max_steps, cfg.warmup_fraction, cfg.peak_lr).unwrap());
        let manual = s.l_ce
            + cfg.loss.lambda1 * s.l_scl.unwrap()
            + cfg.loss.lambda2 * s.l_con.unwrap()
            + s.alpha * cfg.loss.lambda3 * s.l_cc.unwrap();
        assert!((manual - s.l_total).abs() <= 1e-12);
        assert_eq!(total_loss(&s.components(), &cfg.loss, s.alpha).unwrap().to_bits(), s.l_total.to_bits());
    }
}

#[test]
fn without_cc_the_term_never_appears() {
    let (split, mut cfg) = small_setup(4);
    cfg.loss.lambda3 = 0.0;
    let outcome = train(&split, &synth::augmentation(4), &cfg).unwrap();
    assert!(outcome.steps.iter().all(|s| s.l_cc.is_none() && s.l_con.is_some()));
}

#[test]
fn dev_best_checkpoint_matches_history() {
    let (split, cfg) = small_setup(5);
    let outcome = train(&split, &synth::augmentation(5), &cfg).unwrap();
    let best = outcome.dev_history.iter().map(|h| h.1).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(outcome.best.dev_accuracy, Some(best));
    let first = outcome.dev_history.iter().find(|h| h.1 == best).unwrap();
    assert_eq!(outcome.best.step, first.0);
    assert_eq!(outcome.dev_history.last().unwrap().0, cfg.max_steps);
}

#[test]
fn empty_unlabeled_set_is_a_config_error() {
    let (mut split, cfg) = small_setup(6);
    split.unlabeled.clear();
    assert!(matches!(train(&split, &synth::augmentation(6), &cfg), Err(Error::Config(_))));
}

#[test]
fn exploding_learning_rate_aborts_with_component_dump() {
    let (split, mut cfg) = small_setup(7);
    cfg.peak_lr = 1e300;
    cfg.warmup_fraction = 0.0;
    match train(&split, &synth::augmentation(7), &cfg) {
        Err(Error::NumericFault { detail, .. }) => assert!(detail.contains("l_"), "{detail}"),
        other => panic!("expected numeric fault, got {:?}", other.map(|o| o.steps.len())),
    }
}
