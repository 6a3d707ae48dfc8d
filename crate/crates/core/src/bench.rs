//! Latency and storage measurements on synthetic inputs.
//!
//! Encoding runs on random token prefixes, search on random unit-vector
//! indexes. Every report carries an environment line so numbers from
//! different machines are not compared by accident.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::encoder::{encode_parallel, encode_sequential_with, EncoderParams, SequentialStop};
use crate::error::{Error, Result};
use crate::index::{build_dense, compress, default_centroid_count, DenseIndex};
use crate::model::DEFAULT_MAX_LEN;
use crate::prompt::TokenizedPrompt;
use crate::repr::{RepresentationSet, Source};
use crate::tokenizer::NUM_RESERVED;

/// Number of distinct random queries cycled through by search timings.
const QUERY_POOL: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub warmup_runs: usize,
    pub timed_runs: usize,
    /// Prompt prefix lengths in tokens for the encoding benchmark.
    pub input_lengths: Vec<usize>,
    /// Document counts for the search and storage benchmarks.
    pub index_sizes: Vec<usize>,
    /// Mask counts (parallel) and step caps (sequential).
    pub k_values: Vec<usize>,
    /// `(k_q, k_p)` pairs for the search benchmark.
    pub search_budgets: Vec<(usize, usize)>,
    pub hidden_dim: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup_runs: 5,
            timed_runs: 20,
            input_lengths: vec![32, 64, 128],
            index_sizes: vec![1000, 2000, 4000],
            k_values: vec![1, 2, 4, 8],
            search_budgets: vec![(1, 1), (4, 4), (4, 16)],
            hidden_dim: 128,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.timed_runs == 0 {
            return bad("timed_runs must be at least 1");
        }
        for (name, xs) in [("input_lengths", &self.input_lengths), ("index_sizes", &self.index_sizes)] {
            if xs.windows(2).any(|w| w[0] >= w[1]) {
                return bad(&format!("{name} must be strictly ascending"));
            }
            if xs.contains(&0) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if self.k_values.contains(&0) || self.search_budgets.iter().any(|&(q, p)| q == 0 || p == 0) {
            return bad("budgets must be at least 1");
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub axis: usize,
    pub config: String,
    pub mean_ms: f64,
    pub std_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub environment: String,
}

impl BenchReport {
    fn new() -> Self {
        Self { rows: Vec::new(), environment: environment() }
    }

    pub fn get(&self, axis: usize, config: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.axis == axis && r.config == config)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {}", self.environment)?;
        writeln!(w, "axis,config,mean_ms,std_ms")?;
        for r in &self.rows {
            writeln!(w, "{},{},{:.3},{:.3}", r.axis, r.config, r.mean_ms, r.std_ms)?;
        }
        Ok(())
    }
}

/// Host description written as the first line of every report.
pub fn environment() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let host = std::env::var("HOSTNAME").unwrap_or_else(|_| "unknown".into());
    format!(
        "host={host} os={} arch={} threads={threads} pkg={}",
        std::env::consts::OS,
        std::env::consts::ARCH,
        env!("CARGO_PKG_VERSION")
    )
}

/// Mean and population standard deviation in milliseconds over the timed runs.
pub fn time_runs(warmup: usize, timed: usize, mut f: impl FnMut(usize) -> Result<()>) -> Result<(f64, f64)> {
    if timed == 0 {
        return Err(Error::InvalidArgument("timed_runs must be at least 1".into()));
    }
    for i in 0..warmup {
        f(i)?;
    }
    let mut ms = Vec::with_capacity(timed);
    for i in 0..timed {
        let t = Instant::now();
        f(warmup + i)?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mean = ms.iter().sum::<f64>() / timed as f64;
    let var = ms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / timed as f64;
    Ok((mean, var.sqrt()))
}

pub fn parallel_label(k: usize) -> String {
    format!("parallel k={k}")
}

pub fn sequential_label(cap: usize) -> String {
    format!("sequential cap={cap}")
}

/// Times one parallel pass with `k` masks and `cap` sequential steps for each
/// prefix length. Sequential runs always take the full cap.
pub fn bench_encoding(params: &EncoderParams, cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let max_k = cfg.k_values.iter().copied().max().unwrap_or(1);
    if let Some(&len) = cfg.input_lengths.iter().find(|&&l| l + max_k + 3 > DEFAULT_MAX_LEN) {
        return Err(Error::InvalidArgument(format!(
            "input length {len} plus {max_k} masks exceeds the model maximum of {DEFAULT_MAX_LEN}"
        )));
    }
    let v = params.vocab_size() as u32;
    if v <= NUM_RESERVED {
        return Err(Error::InvalidArgument("vocabulary has no ordinary tokens".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = BenchReport::new();
    for &len in &cfg.input_lengths {
        let prefix: Vec<u32> = (0..len).map(|_| rng.random_range(NUM_RESERVED..v)).collect();
        for &k in &cfg.k_values {
            let prompt = TokenizedPrompt::from_prefix(&prefix, k)?;
            let (mean_ms, std_ms) =
                time_runs(cfg.warmup_runs, cfg.timed_runs, |_| encode_parallel(params, &prompt).map(drop))?;
            report.rows.push(BenchRow { axis: len, config: parallel_label(k), mean_ms, std_ms });
        }
        for &cap in &cfg.k_values {
            let (mean_ms, std_ms) = time_runs(cfg.warmup_runs, cfg.timed_runs, |_| {
                encode_sequential_with(params, &prefix, cap, SequentialStop::AtCap).map(drop)
            })?;
            report.rows.push(BenchRow { axis: len, config: sequential_label(cap), mean_ms, std_ms });
        }
    }
    Ok(report)
}

/// Which index structure a search timing uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexFamily {
    Flat,
    Compressed { n_probe: usize },
}

impl fmt::Display for IndexFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexFamily::Flat => write!(f, "flat"),
            IndexFamily::Compressed { n_probe } => write!(f, "compressed(n_probe={n_probe})"),
        }
    }
}

pub fn search_label(family: IndexFamily, k_q: usize, k_p: usize) -> String {
    format!("{family} kq={k_q} kp={k_p}")
}

/// Rows drawn uniformly from the unit sphere.
pub fn random_unit_set(rng: &mut impl Rng, k: usize, h: usize) -> RepresentationSet {
    let mut rows: Vec<f32> = Vec::with_capacity(k * h);
    for _ in 0..k {
        let row: Vec<f64> = (0..h).map(|_| StandardNormal.sample(rng)).collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        rows.extend(row.iter().map(|x| (x / norm) as f32));
    }
    RepresentationSet::new(rows, h, None, 0, Source::Parallel).expect("rows are finite and non-empty")
}

/// Index of `n` documents with `k_p` random unit rows each.
pub fn random_index(rng: &mut impl Rng, n: usize, k_p: usize, h: usize) -> Result<DenseIndex> {
    let docs: Vec<(String, RepresentationSet)> =
        (0..n).map(|i| (format!("d{i}"), random_unit_set(rng, k_p, h))).collect();
    build_dense(docs.iter().map(|(id, r)| (id, r)))
}

/// Per-query search time at each index size and budget pair.
pub fn bench_search(cfg: &BenchConfig, families: &[IndexFamily]) -> Result<BenchReport> {
    cfg.validate()?;
    let h = cfg.hidden_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = BenchReport::new();
    for &n in &cfg.index_sizes {
        for &(k_q, k_p) in &cfg.search_budgets {
            let index = random_index(&mut rng, n, k_p, h)?;
            let queries: Vec<RepresentationSet> = (0..QUERY_POOL).map(|_| random_unit_set(&mut rng, k_q, h)).collect();
            for &family in families {
                let (mean_ms, std_ms) = match family {
                    IndexFamily::Flat => time_runs(cfg.warmup_runs, cfg.timed_runs, |i| {
                        index.search("q", &queries[i % QUERY_POOL], 10).map(drop)
                    })?,
                    IndexFamily::Compressed { n_probe } => {
                        let c = compress(&index, default_centroid_count(index.total_rows()), cfg.seed)?;
                        time_runs(cfg.warmup_runs, cfg.timed_runs, |i| {
                            c.search("q", &queries[i % QUERY_POOL], n_probe, 10).map(drop)
                        })?
                    }
                };
                report.rows.push(BenchRow { axis: n, config: search_label(family, k_q, k_p), mean_ms, std_ms });
            }
        }
    }
    Ok(report)
}

/// Byte counts of one flat index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorageRow {
    pub docs: usize,
    pub k_p: usize,
    pub total_bytes: u64,
    pub vector_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StorageBench {
    pub rows: Vec<StorageRow>,
    pub environment: String,
}

impl StorageBench {
    pub fn get(&self, docs: usize, k_p: usize) -> Option<&StorageRow> {
        self.rows.iter().find(|r| r.docs == docs && r.k_p == k_p)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {}", self.environment)?;
        writeln!(w, "axis,config,total_bytes,vector_bytes")?;
        for r in &self.rows {
            writeln!(w, "{},kp={},{},{}", r.docs, r.k_p, r.total_bytes, r.vector_bytes)?;
        }
        Ok(())
    }
}

/// Builds flat indexes at each size and passage budget and records their
/// exact on-disk byte counts.
pub fn bench_storage(cfg: &BenchConfig) -> Result<StorageBench> {
    cfg.validate()?;
    let mut k_ps: Vec<usize> = cfg.k_values.clone();
    k_ps.sort_unstable();
    k_ps.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for &n in &cfg.index_sizes {
        for &k_p in &k_ps {
            let report = random_index(&mut rng, n, k_p, cfg.hidden_dim)?.storage_report();
            rows.push(StorageRow { docs: n, k_p, total_bytes: report.total(), vector_bytes: report.section("vectors") });
        }
    }
    Ok(StorageBench { rows, environment: environment() })
}
