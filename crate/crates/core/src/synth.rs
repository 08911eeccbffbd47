//! Constructed corpus where vulnerability is a path-structure motif.
//!
//! Vulnerable functions copy a caller-controlled length into a buffer with no
//! bounds check; their fixes add `if (len > CAP) return ...;` in front of the
//! copy. Unchanged functions never contain a copy call. In the training
//! partition function names (optionally every identifier) are drawn from
//! label-specific pools, so names alone predict the label there; everywhere
//! else names come from one shared neutral pool.

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::stage_seed;
use crate::corpus::{make_split, CodeSample, Corpus, Partition, SetKind, Setting, SplitRatios};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_pairs: usize,
    pub n_unchanged: usize,
    pub seed: u64,
    /// Split whose training partition receives the label-correlated names.
    pub split_seed: u64,
    pub ratios: SplitRatios,
    /// Fraction of unchanged functions that carry a length check without a copy.
    pub unchanged_check_rate: f64,
    /// Probability that a training function takes its names from its label's pool.
    pub name_correlation: f64,
    pub name_scope: NameScope,
}

/// Which identifiers carry the training-only label signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NameScope {
    /// Only the function name; parameters and locals stay neutral.
    #[default]
    Function,
    All,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_pairs: 150,
            n_unchanged: 300,
            seed: 7,
            split_seed: 7,
            ratios: SplitRatios::default(),
            unchanged_check_rate: 0.0,
            name_correlation: 1.0,
            name_scope: NameScope::Function,
        }
    }
}

const VULN_FUNCS: &[&str] = &["copy_packet", "recv_frame", "load_blob", "fill_buffer", "read_msg", "push_chunk"];
const VULN_VARS: &[&str] = &["pkt", "frame", "blob", "chunk", "payload", "raw", "wire", "inbuf"];
const SAFE_FUNCS: &[&str] = &["calc_total", "update_stats", "format_line", "hash_key", "scan_table", "tally_row"];
const SAFE_VARS: &[&str] = &["total", "stats", "line", "key", "table", "row", "score", "entry"];
const NEUTRAL_FUNCS: &[&str] = &["handle", "process", "do_work", "step", "run_one", "apply", "visit", "service"];
const NEUTRAL_VARS: &[&str] = &["a", "b", "p", "q", "d", "s", "u", "v", "w", "t", "r", "k"];
const CAPS: &[&str] = &["BUF_MAX", "MAX_LEN", "CAP_SIZE", "LIMIT"];
const COPIES: &[&str] = &["memcpy", "memmove", "copy_bytes"];

#[derive(Clone, Copy)]
enum NamePool {
    Vulnerable,
    Safe,
    Neutral,
}

struct Names {
    func: String,
    dst: String,
    src: String,
    len: String,
    acc: String,
    idx: String,
}

fn pick_names(pool: NamePool, rng: &mut ChaCha8Rng) -> Names {
    let (funcs, vars) = match pool {
        NamePool::Vulnerable => (VULN_FUNCS, VULN_VARS),
        NamePool::Safe => (SAFE_FUNCS, SAFE_VARS),
        NamePool::Neutral => (NEUTRAL_FUNCS, NEUTRAL_VARS),
    };
    let mut vs: Vec<&str> = vars.to_vec();
    vs.shuffle(rng);
    let suffix = rng.gen_range(0..100);
    Names {
        func: format!("{}_{suffix}", funcs.choose(rng).expect("nonempty")),
        dst: format!("{}_dst", vs[0]),
        src: format!("{}_src", vs[1]),
        len: format!("{}_len", vs[2]),
        acc: vs[3].to_string(),
        idx: format!("{}_i", vs[4]),
    }
}

/// Shape of one function, shared by a vulnerable sample and its fix.
#[derive(Clone)]
struct Shape {
    elem: &'static str,
    len_ty: &'static str,
    copy: &'static str,
    cap: &'static str,
    check: usize,
    pre: Vec<usize>,
    core: usize,
    post: Vec<usize>,
    ret: usize,
}

fn random_shape(rng: &mut ChaCha8Rng) -> Shape {
    let mut pre: Vec<usize> = (0..5).filter(|_| rng.gen_bool(0.4)).collect();
    pre.shuffle(rng);
    let post: Vec<usize> = (0..3).filter(|_| rng.gen_bool(0.35)).collect();
    Shape {
        elem: *["char", "unsigned char", "uint8_t"].choose(rng).expect("nonempty"),
        len_ty: *["int", "size_t", "unsigned int"].choose(rng).expect("nonempty"),
        copy: COPIES.choose(rng).expect("nonempty"),
        cap: CAPS.choose(rng).expect("nonempty"),
        check: rng.gen_range(0..3),
        pre,
        core: rng.gen_range(0..4),
        post,
        ret: rng.gen_range(0..3),
    }
}

fn render(kind: SetKind, shape: &Shape, n: &Names, unchanged_check: bool) -> String {
    let (dst, src, len, acc, idx) = (&n.dst, &n.src, &n.len, &n.acc, &n.idx);
    let mut body: Vec<String> = vec![format!("int {acc} = 0;")];
    for &p in &shape.pre {
        body.push(match p {
            0 => format!("if (!{dst}) return -1;"),
            1 => format!("{acc} = {acc} * 31 + 7;"),
            2 => format!("for (int {idx} = 0; {idx} < 4; {idx}++) {acc} += {src}[{idx}];"),
            3 => format!("while ({acc} > 100) {acc} -= 7;"),
            _ => format!("trace_enter({acc});"),
        });
    }
    let check = match shape.check {
        0 => format!("if ({len} > {}) return -1;", shape.cap),
        1 => format!("if ({len} >= {}) return -EINVAL;", shape.cap),
        _ => format!("if ({len} > {} - 1) return -1;", shape.cap),
    };
    match kind {
        SetKind::Vulnerable => body.push(format!("{}({dst}, {src}, {len});", shape.copy)),
        SetKind::Fixed => {
            body.push(check);
            body.push(format!("{}({dst}, {src}, {len});", shape.copy));
        }
        SetKind::Unchanged => {
            if unchanged_check {
                body.push(check);
            }
            body.push(match shape.core {
                0 => format!("{dst}[0] = {src}[0];"),
                1 => format!("for (int {idx} = 0; {idx} < 8; {idx}++) {dst}[{idx}] = {src}[{idx}] ^ 0x5a;"),
                2 => format!("{acc} += checksum({src}, 16);"),
                _ => format!("if ({src}[0] == 0) {acc} = 1; else {acc} = {src}[1];"),
            });
        }
    }
    for &p in &shape.post {
        body.push(match p {
            0 => format!("{dst}[0] = 0;"),
            1 => format!("{acc} += {dst}[1];"),
            _ => format!("log_event({acc});"),
        });
    }
    body.push(match shape.ret {
        0 => format!("return {len};"),
        1 => "return 0;".to_string(),
        _ => format!("return {acc};"),
    });
    let mut s = format!("int {}({} *{dst}, const {} *{src}, {} {len})\n{{\n", n.func, shape.elem, shape.elem, shape.len_ty);
    for line in body {
        s.push_str("    ");
        s.push_str(&line);
        s.push('\n');
    }
    s.push_str("}\n");
    s
}

struct Skeleton {
    id: String,
    kind: SetKind,
    pair: Option<usize>,
    date: NaiveDate,
    shape: Shape,
    unchanged_check: bool,
}

/// Generate the corpus. Deterministic in `config`.
pub fn generate(config: &SynthConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(config.seed, "synth"));
    let epoch = NaiveDate::from_ymd_opt(2010, 1, 1).expect("valid date");
    let mut skel = Vec::new();
    for p in 0..config.n_pairs {
        let shape = random_shape(&mut rng);
        let date = epoch + Duration::days(rng.gen_range(0..3650));
        for kind in [SetKind::Vulnerable, SetKind::Fixed] {
            let tag = if kind == SetKind::Vulnerable { "v" } else { "f" };
            skel.push(Skeleton { id: format!("p{p:04}{tag}"), kind, pair: Some(p), date, shape: shape.clone(), unchanged_check: false });
        }
    }
    for u in 0..config.n_unchanged {
        let shape = random_shape(&mut rng);
        let date = epoch + Duration::days(rng.gen_range(0..3650));
        let unchanged_check = rng.gen_bool(config.unchanged_check_rate.clamp(0.0, 1.0));
        skel.push(Skeleton { id: format!("u{u:04}"), kind: SetKind::Unchanged, pair: None, date, shape, unchanged_check });
    }

    let to_sample = |s: &Skeleton, source: String| {
        CodeSample::new(s.id.clone(), source, s.kind, s.pair.map(|p| format!("pair{p:04}")), Some(s.date))
    };
    let placeholder: Vec<CodeSample> = skel.iter().map(|s| to_sample(s, String::from("int f(){return 0;}"))).collect();
    let draft = Corpus::new(placeholder, "synthetic").expect("generator ids are unique and pairs complete");
    let split = make_split(&draft, Setting::Original, config.ratios, config.split_seed).expect("valid ratios");

    let mut name_rng = ChaCha8Rng::seed_from_u64(stage_seed(config.seed, "synth_names"));
    let mut pair_names: Vec<Option<Names>> = (0..config.n_pairs).map(|_| None).collect();
    let mut samples = Vec::with_capacity(skel.len());
    for s in &skel {
        let owner = match s.pair {
            Some(p) => format!("p{p:04}v"),
            None => s.id.clone(),
        };
        let in_train = split.partition_of(&owner) == Some(Partition::Train);
        let draw = |rng: &mut ChaCha8Rng| {
            let correlated = in_train && rng.gen_bool(config.name_correlation.clamp(0.0, 1.0));
            let pool = match (correlated, s.kind) {
                (false, _) => return pick_names(NamePool::Neutral, rng),
                (true, SetKind::Unchanged) => NamePool::Safe,
                (true, _) => NamePool::Vulnerable,
            };
            let names = pick_names(pool, rng);
            match config.name_scope {
                NameScope::All => names,
                NameScope::Function => Names { func: names.func, ..pick_names(NamePool::Neutral, rng) },
            }
        };
        let fresh;
        let names = match s.pair {
            Some(p) => &*pair_names[p].get_or_insert_with(|| draw(&mut name_rng)),
            None => {
                fresh = draw(&mut name_rng);
                &fresh
            }
        };
        samples.push(to_sample(s, render(s.kind, &s.shape, names, s.unchanged_check)));
    }
    Corpus::new(samples, "synthetic").expect("generator ids are unique and pairs complete")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfgpath::build_cfg;

    #[test]
    fn every_function_parses() {
        let c = generate(&SynthConfig { n_pairs: 40, n_unchanged: 60, unchanged_check_rate: 0.5, ..Default::default() });
        assert_eq!(c.len(), 140);
        for s in c.samples() {
            build_cfg(&s.source).unwrap_or_else(|e| panic!("{}: {e}\n{}", s.id, s.source));
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig { n_pairs: 10, n_unchanged: 10, ..Default::default() };
        assert_eq!(generate(&cfg).to_jsonl(), generate(&cfg).to_jsonl());
    }

    #[test]
    fn motif_by_kind() {
        let c = generate(&SynthConfig { n_pairs: 20, n_unchanged: 30, ..Default::default() });
        for s in c.samples() {
            let copies = COPIES.iter().any(|f| s.source.contains(&format!("{f}(")));
            let checked = CAPS.iter().any(|cap| s.source.contains(cap));
            match s.set_kind {
                SetKind::Vulnerable => assert!(copies && !checked, "{}", s.source),
                SetKind::Fixed => assert!(copies && checked),
                SetKind::Unchanged => assert!(!copies && !checked),
            }
        }
        for (v, f) in c.pairs() {
            assert_eq!(v.timestamp, f.timestamp);
        }
    }
}
