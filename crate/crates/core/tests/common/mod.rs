#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use vulngame::cfgpath::{ControlFlowGraph, EdgeKind, NodeId};
use vulngame::config::ExperimentConfig;
use vulngame::corpus::Corpus;
use vulngame::synth::{generate, SynthConfig};

pub mod grad;

/// Small C functions covering every statement form the CFG builder lowers.
pub const CFG_FIXTURES: &[(&str, &str)] = &[
    ("straight", "int f(){int x=1; x++; return x;}"),
    ("if_only", "int f(int a){ if (a) a = 1; return a; }"),
    ("if_else", "int f(int a){\n if (a)\n  a = 1;\n else\n  a = 2;\n return a;\n}"),
    ("nested_if", "int f(int a, int b){ if (a) { if (b) a = 2; else a = 3; } else a = 4; return a; }"),
    ("else_if_chain", "int f(int a){ if (a == 1) a = 10; else if (a == 2) a = 20; else a = 30; return a; }"),
    ("early_return", "int f(int *p){ if (!p) return -1; *p = 0; return 0; }"),
    ("two_early_returns", "int f(int a, int b){ if (a < 0) return -1; if (b < 0) return -2; return a + b; }"),
    ("while", "int f(int n){ while (n > 0) n--; return n; }"),
    ("while_if", "int f(int n){ int s = 0; while (n) { if (n & 1) s++; n >>= 1; } return s; }"),
    ("while_break", "int f(int n){ while (n) { if (n == 7) break; n--; } return n; }"),
    ("while_continue", "int f(int n){ int s = 0; while (n--) { if (n == 2) continue; s += n; } return s; }"),
    ("for", "int f(int n){ int s = 0; for (int i = 0; i < n; i++) s += i; return s; }"),
    ("for_empty_header", "int f(int n){ for (;;) { if (n-- == 0) break; } return n; }"),
    ("do_while", "int f(int n){ do { n--; } while (n > 0); return n; }"),
    ("switch", "int f(int c){ switch (c) { case 1: c = 10; break; case 2: c = 20; break; default: c = 0; } return c; }"),
    ("switch_fallthrough", "int f(int c){ switch (c) { case 1: c++; case 2: c++; break; } return c; }"),
    ("switch_return", "int f(int c){ switch (c) { case 0: return 1; default: break; } return 2; }"),
    ("goto_cleanup", "int f(int a){ int r = -1; if (a < 0) goto out; r = a; out: return r; }"),
    ("goto_back", "int f(int a){ again: a--; if (a > 0) goto again; return a; }"),
    ("trailing_if", "void f(int a){ if (a) g(a); }"),
    ("loop_in_branch", "int f(int a, int n){ if (a) { while (n) n--; } else n = 1; return n; }"),
    ("empty", "void f(void) { }"),
    ("bounds_check", "int f(char *d, const char *s, int len){ if (len > 64) return -1; memcpy(d, s, len); d[len] = 0; return len; }"),
];

/// A key-update routine in the style of the Linux keyring code, before and
/// after a fix that rejects negatively instantiated keys.
pub const KEY_UPDATE_VULN: &str = r#"int key_update(key_ref_t key_ref, const void *payload, size_t plen)
{
	struct key_preparsed_payload prep;
	struct key *key = key_ref_to_ptr(key_ref);
	int ret;

	key_check(key);
	ret = key_permission(key_ref, KEY_NEED_WRITE);
	if (ret < 0)
		goto error;
	ret = -EOPNOTSUPP;
	if (!key->type->update)
		goto error;
	memset(&prep, 0, sizeof(prep));
	prep.data = payload;
	prep.datalen = plen;
	if (key->type->preparse) {
		ret = key->type->preparse(&prep);
		if (ret < 0)
			goto error;
	}
	down_write(&key->sem);
	ret = key->type->update(key, &prep);
	up_write(&key->sem);
error:
	return ret;
}
"#;

pub const KEY_UPDATE_FIXED: &str = r#"int key_update(key_ref_t key_ref, const void *payload, size_t plen)
{
	struct key_preparsed_payload prep;
	struct key *key = key_ref_to_ptr(key_ref);
	int ret;

	key_check(key);
	ret = key_permission(key_ref, KEY_NEED_WRITE);
	if (ret < 0)
		goto error;
	ret = -EOPNOTSUPP;
	if (!key->type->update)
		goto error;
	memset(&prep, 0, sizeof(prep));
	prep.data = payload;
	prep.datalen = plen;
	if (key->type->preparse) {
		ret = key->type->preparse(&prep);
		if (ret < 0)
			goto error;
	}
	down_write(&key->sem);
	if (test_bit(KEY_FLAG_NEGATIVE, &key->flags))
		ret = -ENOKEY;
	else
		ret = key->type->update(key, &prep);
	up_write(&key->sem);
error:
	return ret;
}
"#;

/// Every entry-to-exit walk, grown one edge at a time from the entry with no
/// ordering or pruning beyond the unroll bound and node cap.
pub fn brute_force_paths(cfg: &ControlFlowGraph, unroll: usize, cap: usize) -> BTreeSet<Vec<NodeId>> {
    let mut done = BTreeSet::new();
    let mut frontier: Vec<Vec<NodeId>> = vec![vec![cfg.entry]];
    while let Some(walk) = frontier.pop() {
        let last = *walk.last().unwrap();
        if cfg.exits.contains(&last) {
            done.insert(walk.clone());
        }
        for e in cfg.edges.iter().filter(|e| e.from == last) {
            let mut next = walk.clone();
            next.push(e.to);
            if next.len() > cap {
                continue;
            }
            let mut uses: HashMap<(NodeId, NodeId), usize> = HashMap::new();
            let over = next.windows(2).any(|w| {
                let back = cfg.edges.iter().any(|x| x.from == w[0] && x.to == w[1] && x.kind == EdgeKind::LoopBack);
                if back {
                    let c = uses.entry((w[0], w[1])).or_default();
                    *c += 1;
                    *c > unroll
                } else {
                    false
                }
            });
            if !over {
                frontier.push(next);
            }
        }
    }
    done
}

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

/// The bundled toy configuration with `seed` swapped in.
pub fn toy_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&data_dir().join("toy.toml")).expect("bundled config loads");
    cfg.seed = seed;
    cfg
}

/// Constructed corpus whose label-correlated names sit in the training
/// partition of the split drawn with the same seed.
pub fn constructed_corpus(seed: u64) -> Corpus {
    generate(&SynthConfig { seed, split_seed: seed, ..Default::default() })
}

/// Relative error; gradients under 1e-4 in magnitude are compared absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let mut xm = x.to_vec();
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

pub mod audit;

/// A 50-pair corpus run through the toy featurizer at small dimensions.
pub fn small_game(seed: u64) -> (vulngame::protogame::GameData, vulngame::protogame::Trunk, ExperimentConfig) {
    use vulngame::corpus::Setting;
    use vulngame::pipeline::{build_game_data, build_trunk, split_for, Featurizer};
    let corpus = generate(&SynthConfig { n_pairs: 50, n_unchanged: 60, seed, split_seed: seed, ..Default::default() });
    let cfg = ExperimentConfig {
        seed,
        embed_dim: 8,
        hash_buckets: 64,
        conv_out_channels: 4,
        optimizer: vulngame::nn::OptimizerKind::Adam,
        learning_rate: 1e-2,
        lambda: 0.5,
        ..Default::default()
    };
    let split = split_for(&corpus, Setting::Original, &cfg).unwrap();
    let data = build_game_data(&corpus, &split, &Featurizer::from_config(&cfg)).unwrap();
    (data, build_trunk(&cfg).unwrap(), cfg)
}

/// Accuracy, precision, recall and F1 counted straight off the label vectors,
/// zero where a denominator vanishes.
pub fn brute_metrics(truth: &[bool], predicted: &[bool]) -> [f64; 4] {
    let n = truth.len() as f64;
    let agree = truth.iter().zip(predicted).filter(|(t, p)| t == p).count() as f64;
    let flagged: Vec<bool> = truth.iter().zip(predicted).filter(|(_, p)| **p).map(|(t, _)| *t).collect();
    let actual: Vec<bool> = truth.iter().zip(predicted).filter(|(t, _)| **t).map(|(_, p)| *p).collect();
    let frac = |v: &[bool]| if v.is_empty() { 0.0 } else { v.iter().filter(|x| **x).count() as f64 / v.len() as f64 };
    let (p, r) = (frac(&flagged), frac(&actual));
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    [if n == 0.0 { 0.0 } else { agree / n }, p, r, f1]
}

pub mod checks;
