//! Finite-difference checks of the loss stack and the trunk.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vulngame::corpus::Label;
use vulngame::encoder::{ConvConfig, ConvFusion, PathEncoder, ToyEncoder};
use vulngame::nn::Mlp;
use vulngame::protogame::{ce_loss, proto_loss, reg_loss, total_loss, total_loss_grad, LossConfig, PrototypeBank, Trunk};

use super::{central_diff, rel_err};

const H: f64 = 1e-5;

#[derive(Debug, Default)]
pub struct GradStats {
    pub checks: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
}

impl GradStats {
    fn add(&mut self, analytic: f64, numeric: f64) {
        self.checks += 1;
        self.max_rel_err = self.max_rel_err.max(rel_err(analytic, numeric));
    }

    pub fn merge(&mut self, other: GradStats) {
        self.checks += other.checks;
        self.skipped += other.skipped;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, a: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-a..a)).collect()
}

fn label(rng: &mut ChaCha8Rng) -> Label {
    if rng.gen_bool(0.5) {
        Label::Vulnerable
    } else {
        Label::NonVulnerable
    }
}

fn head(rng: &mut ChaCha8Rng, dim: usize, hidden: usize) -> Mlp {
    let mut h = Mlp::init(dim, hidden, 2, rng);
    for p in &mut h.params {
        *p += rng.gen_range(-0.3..0.3);
    }
    h
}

/// One random point of the loss stack: the cross-entropy, prototype and
/// regulariser terms and their sum, each against central differences in the
/// feature, the head parameters and the prototypes.
pub fn loss_stack_case(rng: &mut ChaCha8Rng) -> GradStats {
    let dim = rng.gen_range(1..=16);
    let hidden = rng.gen_range(1..=16);
    let s = uniform(rng, dim, 2.0);
    let head = head(rng, dim, hidden);
    let bank = PrototypeBank { dim, m: uniform(rng, 2 * dim, 2.0) };
    let l = label(rng);
    let full = LossConfig { gamma: rng.gen_range(0.1..3.0), lambda: rng.gen_range(0.0..1.0), prototype_off: false };
    let no_reg = LossConfig { lambda: 0.0, ..full };
    let ce_only = LossConfig { prototype_off: true, ..full };

    let g_full = total_loss_grad(&s, l, &head, &bank, &full).unwrap();
    let g_no_reg = total_loss_grad(&s, l, &head, &bank, &no_reg).unwrap();
    let g_ce = total_loss_grad(&s, l, &head, &bank, &ce_only).unwrap();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<f64>>();

    // (term, d/ds, d/dhead, d/dbank)
    type Term<'a> = Box<dyn Fn(&[f64], &Mlp, &PrototypeBank) -> f64 + 'a>;
    let terms: Vec<(Term, Vec<f64>, Vec<f64>, Vec<f64>)> = vec![
        (Box::new(|s, h, _| ce_loss(s, l, h).unwrap()), g_ce.d_feature.clone(), g_ce.d_head.clone(), g_ce.d_bank.clone()),
        (
            Box::new(|s, _, b| proto_loss(s, l, b, full.gamma).unwrap()),
            diff(&g_no_reg.d_feature, &g_ce.d_feature),
            diff(&g_no_reg.d_head, &g_ce.d_head),
            diff(&g_no_reg.d_bank, &g_ce.d_bank),
        ),
        (
            Box::new(|s, _, b| reg_loss(s, l, b, full.lambda).unwrap()),
            diff(&g_full.d_feature, &g_no_reg.d_feature),
            diff(&g_full.d_head, &g_no_reg.d_head),
            diff(&g_full.d_bank, &g_no_reg.d_bank),
        ),
        (
            Box::new(|s, h, b| total_loss(s, l, h, b, &full).unwrap()),
            g_full.d_feature.clone(),
            g_full.d_head.clone(),
            g_full.d_bank.clone(),
        ),
    ];

    let mut stats = GradStats::default();
    for (f, ds, dh, db) in &terms {
        for i in 0..dim {
            let n = central_diff(&mut |x| f(x, &head, &bank), &s, i, H);
            stats.add(ds[i], n);
        }
        for i in 0..head.params.len() {
            let n = central_diff(&mut |p| f(&s, &Mlp { params: p.to_vec(), ..head.clone() }, &bank), &head.params, i, H);
            stats.add(dh[i], n);
        }
        for i in 0..bank.m.len() {
            let n = central_diff(&mut |m| f(&s, &head, &PrototypeBank { dim, m: m.to_vec() }), &bank.m, i, H);
            stats.add(db[i], n);
        }
    }
    stats
}

const VOCAB: &[&str] = &["if", "(", ")", "len", ">", "64", "return", "-1", ";", "memcpy", "buf", "n", "=", "x", "0"];

/// Total loss through a toy trunk (projection and convolution) against central
/// differences in every trunk parameter. Coordinates where the two one-sided
/// differences disagree straddle a max-pool switch and are skipped.
pub fn trunk_case(rng: &mut ChaCha8Rng) -> GradStats {
    let dim = rng.gen_range(2..=8);
    let n_paths = rng.gen_range(1..=3);
    let buckets = 16;
    let n_kernels = rng.gen_range(1..=2);
    let kernel_sizes: Vec<usize> = (0..n_kernels).map(|_| rng.gen_range(1..=5.min(n_paths * dim))).collect();
    let conv = ConvConfig { in_channels: 1, out_channels: rng.gen_range(1..=4), kernel_sizes, dim };
    let enc = ToyEncoder::new(dim, buckets, rng.gen());
    let fusion = ConvFusion::new(conv, n_paths).unwrap();
    let mut trunk = Trunk::for_toy(&enc, fusion, rng).unwrap();
    for p in &mut trunk.params {
        *p += rng.gen_range(-0.1..0.1);
    }
    let inputs: Vec<_> = (0..n_paths)
        .map(|_| {
            let n = rng.gen_range(1..=8);
            let text: Vec<&str> = (0..n).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect();
            enc.input(&text.join(" ")).unwrap()
        })
        .collect();
    let out = trunk.output_dim();
    let hidden = rng.gen_range(1..=8);
    let head = head(rng, out, hidden);
    let bank = PrototypeBank { dim: out, m: uniform(rng, 2 * out, 1.0) };
    let l = label(rng);
    let cfg = LossConfig { gamma: rng.gen_range(0.1..2.0), lambda: rng.gen_range(0.0..1.0), prototype_off: false };

    let (s, trace) = trunk.forward(&inputs).unwrap();
    let lg = total_loss_grad(&s, l, &head, &bank, &cfg).unwrap();
    let mut dparams = vec![0.0; trunk.params.len()];
    trunk.backward(&inputs, &trace, &lg.d_feature, &mut dparams);

    let f = |p: &[f64]| {
        let t = Trunk { params: p.to_vec(), ..trunk.clone() };
        total_loss(&t.forward(&inputs).unwrap().0, l, &head, &bank, &cfg).unwrap()
    };
    let mut stats = GradStats::default();
    let f0 = f(&trunk.params);
    for i in 0..trunk.params.len() {
        let mut xp = trunk.params.clone();
        xp[i] += H;
        let mut xm = trunk.params.clone();
        xm[i] -= H;
        let (fp, fm) = (f(&xp), f(&xm));
        let (fwd, bwd) = ((fp - f0) / H, (f0 - fm) / H);
        if (fwd - bwd).abs() > 1e-2 * (fwd.abs() + bwd.abs() + 1e-4) {
            stats.skipped += 1;
            continue;
        }
        stats.add(dparams[i], (fp - fm) / (2.0 * H));
    }
    stats
}
