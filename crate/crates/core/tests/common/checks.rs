//! Corpus-level checks shared by the module tests and the acceptance run.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vulngame::cfgpath::build_cfg;
use vulngame::corpus::{make_split, CodeSample, Corpus, SetKind, Setting, SplitRatios};
use vulngame::lexer::{code_tokens, TokenKind};
use vulngame::synth::{generate, SynthConfig};
use vulngame::transform::anonymize_source;

use super::{CFG_FIXTURES, KEY_UPDATE_FIXED, KEY_UPDATE_VULN};

/// Fifty functions: the CFG fixtures, the key-update pair and constructed samples.
pub fn fixture_functions() -> Vec<String> {
    let mut out: Vec<String> = CFG_FIXTURES.iter().map(|(_, s)| s.to_string()).collect();
    out.push(KEY_UPDATE_VULN.to_string());
    out.push(KEY_UPDATE_FIXED.to_string());
    let corpus = generate(&SynthConfig { n_pairs: 10, n_unchanged: 10, ..Default::default() });
    out.extend(corpus.samples().iter().take(50 - out.len()).map(|s| s.source.clone()));
    assert_eq!(out.len(), 50);
    out
}

/// Every way `source` breaks reversibility, injectivity, consistency or CFG shape.
pub fn transform_violations(source: &str) -> Vec<String> {
    let mut bad = Vec::new();
    let (t, map) = match anonymize_source(source) {
        Ok(x) => x,
        Err(e) => return vec![format!("not transformed: {e}")],
    };
    if map.restore(&t).as_deref() != Ok(source) {
        bad.push("restore differs".into());
    }
    let symbols: Vec<&String> = map.function_names.values().chain(map.variable_names.values()).collect();
    if symbols.iter().collect::<BTreeSet<_>>().len() != symbols.len() {
        bad.push("two names share a symbol".into());
    }

    let (a, b) = (code_tokens(source).unwrap(), code_tokens(&t).unwrap());
    if a.len() != b.len() {
        bad.push(format!("token count {} vs {}", a.len(), b.len()));
        return bad;
    }
    let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
    for (i, (o, n)) in a.iter().zip(&b).enumerate() {
        let member = i > 0 && (a[i - 1].is_punct(".") || a[i - 1].is_punct("->"));
        let want = match map.symbol(&o.text) {
            Some(s) if o.kind == TokenKind::Ident && !member => s,
            _ => o.text.as_str(),
        };
        if n.text != want {
            bad.push(format!("token {i}: {} became {}", o.text, n.text));
        }
        if o.text != n.text {
            if let Some(prev) = seen.insert(&o.text, &n.text) {
                if prev != n.text {
                    bad.push(format!("{} renamed both {prev} and {}", o.text, n.text));
                }
            }
        }
    }

    match (build_cfg(source), build_cfg(&t)) {
        (Ok(g), Ok(h)) => {
            if g.edge_multiset() != h.edge_multiset() || g.entry != h.entry || g.exits != h.exits || g.nodes.len() != h.nodes.len()
            {
                bad.push("CFG shape differs".into());
            }
            for (x, y) in g.nodes.iter().zip(&h.nodes) {
                if map.restore(&y.text).as_deref() != Ok(x.text.as_str()) {
                    bad.push(format!("node {} text {:?} vs {:?}", x.id, x.text, y.text));
                }
            }
        }
        (g, h) => bad.push(format!("CFG build differs: {:?} / {:?}", g.err(), h.err())),
    }
    bad
}

fn random_corpus(rng: &mut ChaCha8Rng, min_pairs: usize) -> Corpus {
    let n_pairs = rng.gen_range(min_pairs..30);
    let n_unchanged = rng.gen_range(0..40);
    let base = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
    // few distinct days so ties are common
    let days = rng.gen_range(1..60);
    let date = |rng: &mut ChaCha8Rng| Some(base + chrono::Duration::days(rng.gen_range(0..days)));
    let mut samples = Vec::new();
    for i in 0..n_unchanged {
        samples.push(CodeSample::new(format!("u{i}"), "int f(){return 0;}", SetKind::Unchanged, None, date(rng)));
    }
    for i in 0..n_pairs {
        let d = date(rng);
        let p = Some(format!("p{i}"));
        samples.push(CodeSample::new(format!("v{i}"), "int f(){return 1;}", SetKind::Vulnerable, p.clone(), d));
        samples.push(CodeSample::new(format!("f{i}"), "int f(){return 2;}", SetKind::Fixed, p, d));
    }
    // a few vulnerable samples whose fix is missing
    for i in 0..rng.gen_range(0..5) {
        samples.push(CodeSample::new(format!("w{i}"), "int f(){return 3;}", SetKind::Vulnerable, None, date(rng)));
    }
    Corpus::new(samples, "trial").unwrap()
}

/// `(train, valid, test)` for `n` units when valid and test take `a` and `b` twentieths, floored.
fn expected_sizes(n: usize, a: usize, b: usize) -> (usize, usize, usize) {
    let (v, t) = (n * a / 20, n * b / 20);
    (n - v - t, v, t)
}

/// One randomized split; returns every broken rule.
pub fn split_trial(rng: &mut ChaCha8Rng) -> Vec<String> {
    let setting = [Setting::Original, Setting::IdentSubst, Setting::Pair, Setting::PairCombine, Setting::Time][rng.gen_range(0..5)];
    let needs_pairs = matches!(setting, Setting::Pair | Setting::PairCombine);
    let corpus = random_corpus(rng, if needs_pairs { 1 } else { 0 });
    let a = rng.gen_range(0..=10);
    let b = rng.gen_range(0..=(20 - a).min(10));
    let ratios = SplitRatios { train: (20 - a - b) as f64 / 20.0, valid: a as f64 / 20.0, test: b as f64 / 20.0 };
    let seed = rng.gen();
    let split = match make_split(&corpus, setting, ratios, seed) {
        Ok(s) => s,
        Err(e) => return vec![format!("{setting}: {e}")],
    };
    let mut bad = Vec::new();
    let sizes = (split.train.len(), split.valid.len(), split.test.len());
    let pairs = corpus.pairs();
    let detector: Vec<&CodeSample> = corpus.samples().iter().filter(|s| s.set_kind != SetKind::Fixed).collect();

    let (want_sizes, eligible): ((usize, usize, usize), BTreeSet<&str>) = match setting {
        Setting::Original | Setting::IdentSubst | Setting::Time => {
            (expected_sizes(detector.len(), a, b), detector.iter().map(|s| s.id.as_str()).collect())
        }
        Setting::Pair => {
            let (x, y, z) = expected_sizes(pairs.len(), a, b);
            ((2 * x, 2 * y, 2 * z), pairs.iter().flat_map(|(v, f)| [v.id.as_str(), f.id.as_str()]).collect())
        }
        Setting::PairCombine => {
            let (x, y, z) = expected_sizes(pairs.len(), a, b);
            let (p, q, r) = expected_sizes(corpus.len() - 2 * pairs.len(), a, b);
            ((2 * x + p, 2 * y + q, 2 * z + r), corpus.samples().iter().map(|s| s.id.as_str()).collect())
        }
    };
    if sizes != want_sizes {
        bad.push(format!("{setting}: sizes {sizes:?}, want {want_sizes:?}"));
    }
    let all: Vec<&str> = split.train.iter().chain(&split.valid).chain(&split.test).map(String::as_str).collect();
    if all.len() != all.iter().collect::<BTreeSet<_>>().len() {
        bad.push(format!("{setting}: partitions overlap"));
    }
    if all.iter().copied().collect::<BTreeSet<_>>() != eligible {
        bad.push(format!("{setting}: assigned samples differ from the eligible set"));
    }
    if needs_pairs {
        for (v, f) in &pairs {
            if split.partition_of(&v.id) != split.partition_of(&f.id) {
                bad.push(format!("{setting}: pair {} split across partitions", v.id));
            }
        }
    }
    if setting == Setting::Time {
        let dates = |ids: &BTreeSet<String>| ids.iter().map(|id| corpus.get(id).unwrap().timestamp.unwrap()).collect::<Vec<_>>();
        let (tr, va, te) = (dates(&split.train), dates(&split.valid), dates(&split.test));
        let later = |x: &[NaiveDate], y: &[NaiveDate]| matches!((x.iter().max(), y.iter().min()), (Some(p), Some(q)) if p > q);
        if later(&tr, &va) || later(&tr, &te) || later(&va, &te) {
            bad.push("time: a later partition holds an earlier date".into());
        }
    }
    if make_split(&corpus, setting, ratios, seed).ok().as_ref() != Some(&split) {
        bad.push(format!("{setting}: not deterministic"));
    }
    bad
}
