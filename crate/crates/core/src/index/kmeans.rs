//! Seeded k-means with k-means++ initialisation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const KMEANS_MAX_ITERS: usize = 25;
/// Relative inertia change below which iteration stops.
pub const KMEANS_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// `C × H`, row-major.
    pub centroids: Vec<f32>,
    /// Nearest centroid (L2) of every input row.
    pub assignments: Vec<u32>,
    pub iterations: usize,
    pub inertia: f64,
}

// Eight independent lanes let the compiler vectorise the reduction.
pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    lanes.iter().sum::<f32>() + tail
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum()
}

/// Index of the nearest centroid by L2 distance; ties go to the lower id.
fn nearest(row: &[f32], centroids: &[f32], norms: &[f32], h: usize) -> u32 {
    // ||x - c||^2 = ||x||^2 - 2<x,c> + ||c||^2; the first term is shared.
    let mut best = f32::INFINITY;
    let mut best_c = 0;
    for (c, (cent, &n)) in centroids.chunks_exact(h).zip(norms).enumerate() {
        let d = n - 2.0 * dot_f32(row, cent);
        if d < best {
            best = d;
            best_c = c;
        }
    }
    best_c as u32
}

fn plus_plus_init(rows: &[f32], h: usize, c: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = rows.len() / h;
    let first = rng.random_range(0..n);
    let mut centroids = rows[first * h..(first + 1) * h].to_vec();
    let mut d2: Vec<f64> = rows.chunks_exact(h).map(|r| sq_dist(r, &centroids)).collect();
    while centroids.len() < c * h {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|&d| {
                    acc += d;
                    acc > target
                })
                .unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // Every row already coincides with a centroid.
            0
        };
        let new = rows[pick * h..(pick + 1) * h].to_vec();
        for (d, r) in d2.iter_mut().zip(rows.chunks_exact(h)) {
            *d = d.min(sq_dist(r, &new));
        }
        centroids.extend(new);
    }
    centroids
}

/// Clusters `rows` (row-major, width `h`) into `c` centroids.
pub fn kmeans(rows: &[f32], h: usize, c: usize, seed: u64) -> Result<KMeans> {
    let n = rows.len() / h;
    if c == 0 || c > n {
        return Err(Error::TooFewRows { rows: n, centroids: c });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(rows, h, c, &mut rng);
    let mut assignments = vec![0u32; n];
    let mut prev_inertia = f64::INFINITY;
    let mut inertia = f64::INFINITY;
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        let norms: Vec<f32> = centroids.chunks_exact(h).map(|c| dot_f32(c, c)).collect();
        for (a, row) in assignments.iter_mut().zip(rows.chunks_exact(h)) {
            *a = nearest(row, &centroids, &norms, h);
        }
        let mut sums = vec![0f64; c * h];
        let mut counts = vec![0usize; c];
        for (&a, row) in assignments.iter().zip(rows.chunks_exact(h)) {
            counts[a as usize] += 1;
            for (s, &x) in sums[a as usize * h..(a as usize + 1) * h].iter_mut().zip(row) {
                *s += x as f64;
            }
        }
        for (k, &cnt) in counts.iter().enumerate() {
            // Empty clusters keep their previous centroid.
            if cnt > 0 {
                for (dst, s) in centroids[k * h..(k + 1) * h].iter_mut().zip(&sums[k * h..(k + 1) * h]) {
                    *dst = (s / cnt as f64) as f32;
                }
            }
        }
        inertia = assignments
            .iter()
            .zip(rows.chunks_exact(h))
            .map(|(&a, row)| sq_dist(row, &centroids[a as usize * h..(a as usize + 1) * h]))
            .sum();
        let converged = prev_inertia.is_finite()
            && (prev_inertia == 0.0 || (prev_inertia - inertia).abs() / prev_inertia < KMEANS_TOLERANCE);
        prev_inertia = inertia;
        if converged || inertia == 0.0 {
            break;
        }
    }
    // Final assignment against the final centroids.
    let norms: Vec<f32> = centroids.chunks_exact(h).map(|c| dot_f32(c, c)).collect();
    for (a, row) in assignments.iter_mut().zip(rows.chunks_exact(h)) {
        *a = nearest(row, &centroids, &norms, h);
    }
    Ok(KMeans { centroids, assignments, iterations, inertia })
}
