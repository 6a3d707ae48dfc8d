//! Query features and rank correlation statistics.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tokenizer::pre_tokenize;

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryFeatures {
    /// Word-token count.
    pub length: usize,
    /// Shannon entropy of the query's token distribution, in bits.
    pub entropy_bits: f64,
}

pub fn query_features(text: &str) -> QueryFeatures {
    let tokens = pre_tokenize(text);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &tokens {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let n = tokens.len() as f64;
    let mut freqs: Vec<usize> = counts.into_values().collect();
    freqs.sort_unstable();
    let entropy_bits = freqs
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0);
    QueryFeatures { length: tokens.len(), entropy_bits }
}

/// 1-based ranks; tied values share the average of their positions.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 points, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN in correlation input".into()));
    }
    Ok(())
}

/// Pearson correlation of average ranks. NaN when either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    Ok(pearson(&average_ranks(xs), &average_ranks(ys)))
}

/// Number of tied pairs within runs of equal values of a sorted sequence.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Merge sort that returns the number of inversions.
fn sort_count_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_count_swaps(&mut v[..mid], &mut buf[..mid]) + sort_count_swaps(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall tau-b in O(n log n) (Knight's algorithm). NaN when either side
/// is constant.
pub fn kendall_tau_b(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    let n = xs.len() as u64;
    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let xs_sorted: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n1 = tied_pairs(&xs_sorted);
    let n3 = tied_pairs(&pairs);
    let mut ys_sorted: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys_sorted.len()];
    let swaps = sort_count_swaps(&mut ys_sorted, &mut buf);
    let n2 = tied_pairs(&ys_sorted);
    let n0 = n * (n - 1) / 2;
    if n1 == n0 || n2 == n0 {
        return Ok(f64::NAN);
    }
    // concordant − discordant
    let s = n0 as i128 - n1 as i128 - n2 as i128 + n3 as i128 - 2 * swaps as i128;
    let denom = (((n0 - n1) as f64) * ((n0 - n2) as f64)).sqrt();
    Ok((s as f64 / denom).clamp(-1.0, 1.0))
}

/// `(spearman, kendall_tau_b)`.
pub fn rank_correlation(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    Ok((spearman(xs, ys)?, kendall_tau_b(xs, ys)?))
}

/// Point estimate and percentile interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapInterval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    /// Resamples with a defined statistic; constant resamples are dropped.
    pub resamples: usize,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Pair-resampling bootstrap of both rank correlations, returned as
/// `(spearman, kendall)` intervals at the given confidence level.
pub fn bootstrap_correlation(
    xs: &[f64],
    ys: &[f64],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(BootstrapInterval, BootstrapInterval)> {
    let (rho, tau) = rank_correlation(xs, ys)?;
    if !(0.0 < level && level < 1.0) || resamples == 0 {
        return Err(Error::InvalidArgument(format!("bad bootstrap setup: level {level}, {resamples} resamples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = xs.len();
    let (mut rhos, mut taus) = (Vec::with_capacity(resamples), Vec::with_capacity(resamples));
    let (mut bx, mut by) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..resamples {
        for i in 0..n {
            let j = rng.random_range(0..n);
            bx[i] = xs[j];
            by[i] = ys[j];
        }
        let (r, t) = rank_correlation(&bx, &by)?;
        if !r.is_nan() {
            rhos.push(r);
        }
        if !t.is_nan() {
            taus.push(t);
        }
    }
    let alpha = (1.0 - level) / 2.0;
    let interval = |estimate: f64, mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        BootstrapInterval { estimate, lower: percentile(&v, alpha), upper: percentile(&v, 1.0 - alpha), resamples: v.len() }
    };
    Ok((interval(rho, rhos), interval(tau, taus)))
}
