mod common;

use std::cell::RefCell;
use std::collections::BTreeSet;

use common::brute_metrics;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vulngame::corpus::{make_split, CodeSample, Label, SetKind, Setting, SplitRatios};
use vulngame::encoder::{ConvConfig, ConvFusion, PathInput};
use vulngame::eval::{evaluate_setting, metrics, pair_same_label_rate, ConfusionCounts, EvalError, SampleSource};
use vulngame::nn::Mlp;
use vulngame::protogame::{LossConfig, Model, PrototypeBank, Trunk};
use vulngame::synth::{generate, SynthConfig};

fn label(v: bool) -> Label {
    if v {
        Label::Vulnerable
    } else {
        Label::NonVulnerable
    }
}

#[test]
fn metrics_match_brute_force_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let n = rng.gen_range(0..60);
        let bias = rng.gen_range(0.0..1.0);
        let truth: Vec<bool> = (0..n).map(|_| rng.gen_bool(bias)).collect();
        let pred: Vec<bool> = (0..n).map(|_| rng.gen_bool(1.0 - bias)).collect();
        let c = ConfusionCounts::from_labels(
            &truth.iter().map(|&t| label(t)).collect::<Vec<_>>(),
            &pred.iter().map(|&p| label(p)).collect::<Vec<_>>(),
        );
        let m = metrics(&c);
        let want = brute_metrics(&truth, &pred);
        for (got, want) in [m.accuracy, m.precision, m.recall, m.f1].iter().zip(want) {
            assert!((got - want).abs() <= 1e-12, "{c:?}: {got} vs {want}");
        }
    }
}

#[test]
fn worked_cases() {
    let m = metrics(&ConfusionCounts { tp: 1, fp: 0, tn: 1, fn_: 0 });
    assert_eq!([m.accuracy, m.precision, m.recall, m.f1], [1.0; 4]);
    assert!(!m.undefined.any());
    let m = metrics(&ConfusionCounts { tp: 1, fp: 1, tn: 0, fn_: 1 });
    assert_eq!([m.precision, m.recall, m.f1], [0.5; 3]);
    assert_eq!(m.accuracy, 1.0 / 3.0);
    let m = metrics(&ConfusionCounts { tp: 0, fp: 0, tn: 4, fn_: 0 });
    assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    assert!(m.undefined.precision && m.undefined.recall && m.undefined.f1 && !m.undefined.accuracy);
}

proptest! {
    #[test]
    fn f1_ignores_true_negatives(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50, tn in 0usize..50, tn2 in 0usize..50) {
        let a = metrics(&ConfusionCounts { tp, fp, tn, fn_ });
        let b = metrics(&ConfusionCounts { tp, fp, tn: tn2, fn_ });
        prop_assert_eq!(a.f1, b.f1);
        prop_assert_eq!(a.precision, b.precision);
        prop_assert_eq!(a.recall, b.recall);
    }
}

/// Dense single-value paths; the detector flags positive inputs when `oracle`,
/// otherwise it says non-vulnerable to everything.
fn sign_model(oracle: bool) -> Model {
    let fusion = ConvFusion::new(ConvConfig { in_channels: 1, out_channels: 1, kernel_sizes: vec![1], dim: 1 }, 1).unwrap();
    let mut trunk = Trunk::for_dense(fusion, &mut ChaCha8Rng::seed_from_u64(0));
    trunk.params.iter_mut().for_each(|p| *p = 0.0);
    // feature = [pooled conv, x]
    let mut head = Mlp::zeros(2, 1, 2);
    if oracle {
        head.params[1] = 5.0; // W1[0][1]
        head.params[4] = 5.0; // W2[1][0]
    } else {
        head.params[5] = 1.0; // b2[0]
    }
    Model {
        trunk,
        trunk_c: None,
        head_d: head.clone(),
        head_c: head,
        bank: PrototypeBank::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
        loss: LossConfig::default(),
        threshold: None,
    }
}

fn input(x: f64) -> Vec<PathInput> {
    vec![PathInput::Dense(vec![x])]
}

#[test]
fn pair_rate_extremes() {
    let pairs: Vec<_> = (0..7).map(|_| (input(1.0), input(-1.0))).collect();
    assert_eq!(pair_same_label_rate(&sign_model(false), &pairs).unwrap(), 1.0);
    assert_eq!(pair_same_label_rate(&sign_model(true), &pairs).unwrap(), 0.0);
    assert!(matches!(pair_same_label_rate(&sign_model(true), &[]), Err(EvalError::EmptyPairs)));
}

/// Positive input for vulnerable code, negative otherwise; remembers every id asked for.
struct Recording(RefCell<Vec<String>>);

impl SampleSource for Recording {
    fn inputs(&self, sample: &CodeSample) -> Result<Vec<PathInput>, EvalError> {
        self.0.borrow_mut().push(sample.id.clone());
        Ok(input(if sample.label == Label::Vulnerable { 1.0 } else { -1.0 }))
    }
}

#[test]
fn evaluation_reads_only_test_samples_and_their_fixes() {
    let corpus = generate(&SynthConfig { n_pairs: 40, n_unchanged: 60, ..Default::default() });
    for setting in [Setting::Original, Setting::Pair, Setting::PairCombine, Setting::Time] {
        let split = make_split(&corpus, setting, SplitRatios::default(), 3).unwrap();
        let source = Recording(RefCell::new(Vec::new()));
        let report = evaluate_setting(&sign_model(true), setting, &corpus, &split, &source).unwrap();
        assert_eq!(report.counts.total(), split.test.len());
        assert_eq!(report.f1, 1.0);
        let seen: BTreeSet<String> = source.0.into_inner().into_iter().collect();
        for id in &seen {
            let s = corpus.get(id).unwrap();
            let fix_of_test = s.set_kind == SetKind::Fixed && split.partition_of(id).is_none();
            assert!(split.test.contains(id) || fix_of_test, "{setting}: read {id}");
        }
        if setting == Setting::Pair {
            assert_eq!(report.pair_same_label_rate, Some(0.0));
            assert_eq!(report.n_pairs * 2, split.test.len());
        }
    }
}

#[test]
fn setting_guards() {
    let corpus = generate(&SynthConfig { n_pairs: 40, n_unchanged: 60, ..Default::default() });
    let source = Recording(RefCell::new(Vec::new()));
    let model = sign_model(true);
    let original = make_split(&corpus, Setting::Original, SplitRatios::default(), 3).unwrap();
    assert!(matches!(
        evaluate_setting(&model, Setting::Pair, &corpus, &original, &source),
        Err(EvalError::SettingMismatch { .. })
    ));
    assert!(evaluate_setting(&model, Setting::IdentSubst, &corpus, &original, &source).is_ok());

    let mut time = make_split(&corpus, Setting::Time, SplitRatios::default(), 3).unwrap();
    let latest = time.test.iter().max_by_key(|id| corpus.get(id).unwrap().timestamp).unwrap().clone();
    let earliest = time.train.iter().min_by_key(|id| corpus.get(id).unwrap().timestamp).unwrap().clone();
    time.test.remove(&latest);
    time.train.remove(&earliest);
    time.train.insert(latest);
    time.test.insert(earliest);
    assert!(matches!(evaluate_setting(&model, Setting::Time, &corpus, &time, &source), Err(EvalError::TimeOrder { .. })));
}
