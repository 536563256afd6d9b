//! Split protocol checked by recounting labels from the source corpus.

use std::collections::{BTreeMap, BTreeSet};

use semishot_core::corpus::{make_split, three_seed_splits, CorpusSplit, Example, LabelMap, SplitSpec};
use semishot_core::Error;

fn corpus(per_class: &[usize]) -> (Vec<Example>, LabelMap) {
    let mut data = Vec::new();
    for (c, &n) in per_class.iter().enumerate() {
        for i in 0..n {
            data.push(Example::new(format!("c{c}-{i}"), format!("text {c} {i}"), Some(c)));
        }
    }
    let names: Vec<String> = (0..per_class.len()).map(|c| format!("class{c}")).collect();
    (data, LabelMap::new(names).unwrap())
}

fn counts(split_part: &[Example], truth: &BTreeMap<&str, usize>, classes: usize) -> Vec<usize> {
    let mut out = vec![0; classes];
    for e in split_part {
        out[truth[e.id.as_str()]] += 1;
    }
    out
}

fn check(split: &CorpusSplit, data: &[Example], spec: SplitSpec, classes: usize) {
    let truth: BTreeMap<&str, usize> = data.iter().map(|e| (e.id.as_str(), e.label.unwrap())).collect();
    assert_eq!(counts(&split.labeled, &truth, classes), vec![spec.per_class; classes]);
    for (part, total) in [(&split.unlabeled, spec.unlabeled), (&split.dev, spec.dev)] {
        let c = counts(part, &truth, classes);
        assert_eq!(c.iter().sum::<usize>(), total);
        let (lo, hi) = (c.iter().min().unwrap(), c.iter().max().unwrap());
        assert!(hi - lo <= 1, "uneven {c:?}");
    }
    let ids = |p: &[Example]| p.iter().map(|e| e.id.clone()).collect::<BTreeSet<_>>();
    let (l, u, d) = (ids(&split.labeled), ids(&split.unlabeled), ids(&split.dev));
    assert!(l.is_disjoint(&u) && l.is_disjoint(&d) && u.is_disjoint(&d));
    assert_eq!(l.len() + u.len() + d.len(), split.labeled.len() + split.unlabeled.len() + split.dev.len());
    assert!(split.unlabeled.iter().all(|e| e.label.is_none()));
}

#[test]
fn three_seed_splits_are_stratified_disjoint_and_even() {
    let (data, labels) = corpus(&[400, 380, 390, 410]);
    let spec = SplitSpec {
        per_class: 10,
        unlabeled: 1000,
        dev: 402,
    };
    let splits = three_seed_splits(&data, &labels, spec, [1, 2, 3]).unwrap();
    for s in &splits {
        check(s, &data, spec, 4);
    }
    assert_ne!(splits[0].labeled, splits[1].labeled);
}

#[test]
fn split_is_reproducible_and_round_trips_through_manifest() {
    let (data, labels) = corpus(&[100, 100]);
    let spec = SplitSpec {
        per_class: 5,
        unlabeled: 60,
        dev: 40,
    };
    let a = make_split(&data, &labels, spec, 77).unwrap();
    let b = make_split(&data, &labels, spec, 77).unwrap();
    assert_eq!(a, b);
    let rebuilt = CorpusSplit::from_manifest(&data, 2, &a.manifest(), 77).unwrap();
    assert_eq!(rebuilt, a);
}

#[test]
fn short_class_is_reported_by_name() {
    let (data, labels) = corpus(&[100, 20]);
    let spec = SplitSpec {
        per_class: 10,
        unlabeled: 60,
        dev: 40,
    };
    match make_split(&data, &labels, spec, 1) {
        Err(Error::Split(msg)) => assert!(msg.contains("class1"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn labeled_must_be_fewer_than_unlabeled() {
    let (data, labels) = corpus(&[100, 100]);
    let spec = SplitSpec {
        per_class: 10,
        unlabeled: 20,
        dev: 0,
    };
    assert!(matches!(make_split(&data, &labels, spec, 1), Err(Error::Config(_))));
}

#[test]
fn duplicate_seeds_rejected() {
    let (data, labels) = corpus(&[100, 100]);
    let spec = SplitSpec {
        per_class: 2,
        unlabeled: 10,
        dev: 4,
    };
    assert!(three_seed_splits(&data, &labels, spec, [4, 4, 5]).is_err());
}
