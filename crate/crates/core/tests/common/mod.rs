#![allow(dead_code)]

use multirep::encoder::{EncoderConfig, EncoderParams};
use multirep::prompt::TokenizedPrompt;
use multirep::repr::{Logits, RepresentationSet, Source};
use multirep::scoring::ContentWordFilter;
use multirep::training::{batch_objective, Objective, PromptExample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn random_set(rng: &mut ChaCha8Rng, k: usize, h: usize) -> RepresentationSet {
    RepresentationSet::from_hidden(gauss(rng, k * h), h).unwrap()
}

/// A set with dense logits; roughly half of the logits are negative.
pub fn random_set_with_logits(rng: &mut ChaCha8Rng, k: usize, h: usize, v: usize) -> RepresentationSet {
    let logits = gauss(rng, k * v).into_iter().map(|x| 2.0 * x).collect();
    RepresentationSet::new(gauss(rng, k * h), h, Some(Logits::Dense(logits)), v, Source::Parallel).unwrap()
}

/// `n` docs of `kp` rows; each row is one of `topics` random centres plus noise.
pub fn mixture_docs(
    rng: &mut ChaCha8Rng,
    n: usize,
    kp: usize,
    h: usize,
    topics: usize,
    noise: f32,
) -> Vec<(String, RepresentationSet)> {
    let centres = gauss(rng, topics * h);
    (0..n)
        .map(|d| {
            let mut rows = gauss(rng, kp * h);
            for r in 0..kp {
                let c = rng.random_range(0..topics);
                for j in 0..h {
                    rows[r * h + j] = centres[c * h + j] + noise * rows[r * h + j];
                }
            }
            (format!("doc{d:05}"), RepresentationSet::from_hidden(rows, h).unwrap())
        })
        .collect()
}

/// Noisy copy of the first `kq` rows of `doc`.
pub fn noisy_query(rng: &mut ChaCha8Rng, doc: &RepresentationSet, kq: usize, noise: f32) -> RepresentationSet {
    let h = doc.hidden_dim();
    let kq = kq.min(doc.k());
    let nz = gauss(rng, kq * h);
    let rows = doc.hidden()[..kq * h].iter().zip(nz).map(|(&x, e)| x + noise * e).collect();
    RepresentationSet::from_hidden(rows, h).unwrap()
}

/// Brute-force MaxSim in f64 with explicit loops.
pub fn maxsim_oracle(q: &RepresentationSet, p: &RepresentationSet) -> f64 {
    let h = q.hidden_dim();
    let mut total = 0.0;
    for i in 0..q.k() {
        let mut best = f64::NEG_INFINITY;
        for j in 0..p.k() {
            let mut s = 0.0;
            for d in 0..h {
                s += q.hidden()[i * h + d] as f64 * p.hidden()[j * h + d] as f64;
            }
            if s > best {
                best = s;
            }
        }
        total += best;
    }
    total / q.k() as f64
}

/// Fraction of `a`'s first ten ids found in `b`'s first ten.
pub fn overlap_at_10<'a>(a: impl Iterator<Item = &'a str>, b: impl Iterator<Item = &'a str>) -> f64 {
    let a: Vec<&str> = a.take(10).collect();
    let b: Vec<&str> = b.take(10).collect();
    a.iter().filter(|x| b.contains(x)).count() as f64 / a.len().max(1) as f64
}

/// Kendall tau-b by counting every pair.
pub fn kendall_pairs_oracle(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = xs[i].partial_cmp(&xs[j]).unwrap() as i32;
            let dy = ys[i].partial_cmp(&ys[j]).unwrap() as i32;
            tx += (dx == 0) as i64;
            ty += (dy == 0) as i64;
            match (dx * dy).signum() {
                1 => c += 1,
                -1 => d += 1,
                _ => {}
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    (c - d) as f64 / (((n0 - tx) * (n0 - ty)) as f64).sqrt()
}

/// Spearman rho with ranks from pair counting: 1 + #smaller + (#equal - 1) / 2.
pub fn spearman_pairs_oracle(xs: &[f64], ys: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let eq = v.iter().filter(|b| *b == a).count() as f64;
                1.0 + less + (eq - 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(xs), rank(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

/// `n` values drawn from `levels` distinct values, so ties are common.
pub fn tied_sample(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0..levels) as f64).collect()
}

fn permutations(items: &[u32]) -> Vec<Vec<u32>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

/// Ideal DCG@10 as the best DCG over every ordering of the positive grades.
pub fn ideal_dcg_bruteforce(grades: &[u32]) -> f64 {
    let positive: Vec<u32> = grades.iter().copied().filter(|&g| g > 0).collect();
    permutations(&positive)
        .iter()
        .map(|p| p.iter().take(10).enumerate().map(|(i, &g)| g as f64 / ((i + 2) as f64).log2()).sum::<f64>())
        .fold(0.0, f64::max)
}

const EPS: f64 = 1e-5;

fn random_prompt(rng: &mut ChaCha8Rng, v: u32, k: usize) -> TokenizedPrompt {
    let len = rng.random_range(3..9);
    let ids: Vec<u32> = (0..len).map(|_| rng.random_range(5..v)).collect();
    TokenizedPrompt::from_prefix(&ids, k).unwrap()
}

fn random_batch(rng: &mut ChaCha8Rng, v: u32) -> Vec<PromptExample> {
    (0..3)
        .map(|_| PromptExample {
            query: random_prompt(rng, v, 2),
            positive: random_prompt(rng, v, 3),
            negatives: (0..2).map(|_| random_prompt(rng, v, 3)).collect(),
        })
        .collect()
}

pub struct CheckOutcome {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Central differences over every parameter; parameters whose perturbation
/// changes a discrete choice are skipped.
pub fn gradient_check(seed: u64, tau: f64, objective: Objective) -> CheckOutcome {
    let v = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = EncoderParams::init(EncoderConfig::new(v, 8, 2, seed)).unwrap();
    let filter = ContentWordFilter::from_ids(v, (5..v as u32).filter(|i| i % 4 != 0));
    let batch = random_batch(&mut rng, v as u32);
    let base = batch_objective(&params, &batch, tau, objective, &filter, true).unwrap();
    let grad = base.grad.unwrap();
    // Components far below the largest one are compared on the gradient's
    // own scale; their finite differences are dominated by rounding.
    let floor = 1e-6 * grad.iter().fold(1.0f64, |m, g| m.max(g.abs()));
    let mut out = CheckOutcome { max_rel_err: 0.0, checked: 0, skipped: 0 };
    for i in 0..grad.len() {
        let orig = params.as_flat()[i];
        params.as_flat_mut()[i] = orig + EPS;
        let plus = batch_objective(&params, &batch, tau, objective, &filter, false).unwrap();
        params.as_flat_mut()[i] = orig - EPS;
        let minus = batch_objective(&params, &batch, tau, objective, &filter, false).unwrap();
        params.as_flat_mut()[i] = orig;
        if plus.pattern != base.pattern || minus.pattern != base.pattern {
            out.skipped += 1;
            continue;
        }
        let numeric = (plus.loss.total - minus.loss.total) / (2.0 * EPS);
        let analytic = grad[i];
        let denom = analytic.abs().max(numeric.abs()).max(floor);
        out.max_rel_err = out.max_rel_err.max((analytic - numeric).abs() / denom);
        out.checked += 1;
    }
    out
}
