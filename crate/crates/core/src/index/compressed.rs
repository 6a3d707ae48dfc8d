//! Centroid + residual compression of a dense index.
//!
//! Every row is stored as the id of its nearest k-means centroid and a 2-bit
//! code per dimension for the residual. Codes index four equal-width buckets
//! over a symmetric per-dimension range; decoding takes the bucket midpoint.
//!
//! File layout:
//!
//! ```text
//! "CIDX" | version u32 | H u32 | C u32 | n_docs u64 | rows u64
//! doc_table: n_docs * (len u16, UTF-8)
//! row_offsets: n_docs * (start u64, k u32)
//! centroids: C * H f32
//! quant_scales: H * (lo f32, hi f32)
//! assignments: rows * u32
//! residual_codes: rows * ceil(H / 4) bytes, 4 codes per byte, low bits first
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use byteorder::{LittleEndian as LE, WriteBytesExt};

use super::kmeans::kmeans;
use super::{write_doc_table, write_f32s, write_file, write_offsets, DenseIndex, FileReader, SectionWriter, StorageReport};
use crate::error::{Error, Result};
use crate::repr::RepresentationSet;
use crate::scoring::{dot, maxsim_rows, ScoredList};

const MAGIC: &[u8; 4] = b"CIDX";
const LEVELS: f32 = 4.0;
/// Half-range of the residual buckets in standard deviations.
const SIGMA_RANGE: f64 = 3.0;

/// Probed centroids per query row when the caller does not choose.
pub const DEFAULT_N_PROBE: usize = 8;

/// Codebook size used when none is given: the largest power of two not above
/// `4 * sqrt(rows)`, capped at `rows`.
pub fn default_centroid_count(rows: usize) -> usize {
    let target = (4.0 * (rows as f64).sqrt()).max(1.0);
    let pow = 1usize << (target.log2().floor() as u32);
    pow.clamp(1, rows.max(1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedIndex {
    hidden_dim: usize,
    n_centroids: usize,
    doc_ids: Vec<String>,
    offsets: Vec<(usize, usize)>,
    centroids: Vec<f32>,
    scales: Vec<(f32, f32)>,
    assignments: Vec<u32>,
    codes: Vec<u8>,
    // Derived on build/load: doc ordinals owning a row in each centroid.
    centroid_docs: Vec<Vec<u32>>,
}

fn code_bytes(h: usize) -> usize {
    h.div_ceil(4)
}

fn quantize(x: f32, (lo, hi): (f32, f32)) -> u8 {
    if hi <= lo {
        return 0;
    }
    let w = (hi - lo) / LEVELS;
    ((x - lo) / w).floor().clamp(0.0, LEVELS - 1.0) as u8
}

fn dequantize(code: u8, (lo, hi): (f32, f32)) -> f32 {
    lo + (code as f32 + 0.5) * (hi - lo) / LEVELS
}

/// Symmetric range `[-a, a]` with `a = max(3σ, max|r| / 1.25)`.
///
/// The second term keeps every residual within half a bucket of the range,
/// so no reconstruction error exceeds one bucket width.
fn residual_scale(values: impl Iterator<Item = f32>) -> (f32, f32) {
    let (mut n, mut sum, mut sq, mut max_abs) = (0usize, 0f64, 0f64, 0f64);
    for v in values {
        let v = v as f64;
        n += 1;
        sum += v;
        sq += v * v;
        max_abs = max_abs.max(v.abs());
    }
    let mean = sum / n as f64;
    let sigma = (sq / n as f64 - mean * mean).max(0.0).sqrt();
    let a = (SIGMA_RANGE * sigma).max(max_abs / (1.0 + 0.5 / LEVELS as f64)) as f32;
    (-a, a)
}

/// Clusters all rows and encodes each as centroid id plus 2-bit residuals.
pub fn compress(index: &DenseIndex, n_centroids: usize, seed: u64) -> Result<CompressedIndex> {
    let h = index.hidden_dim();
    let rows = index.vectors();
    let km = kmeans(rows, h, n_centroids, seed)?;
    let n = index.total_rows();
    let residual = |r: usize, d: usize| rows[r * h + d] - km.centroids[km.assignments[r] as usize * h + d];
    let scales: Vec<(f32, f32)> = (0..h).map(|d| residual_scale((0..n).map(|r| residual(r, d)))).collect();
    let cb = code_bytes(h);
    let mut codes = vec![0u8; n * cb];
    for r in 0..n {
        for (d, &scale) in scales.iter().enumerate() {
            codes[r * cb + d / 4] |= quantize(residual(r, d), scale) << (2 * (d % 4));
        }
    }
    Ok(CompressedIndex::assemble(
        h,
        n_centroids,
        index.doc_ids().to_vec(),
        index.offsets().to_vec(),
        km.centroids,
        scales,
        km.assignments,
        codes,
    ))
}

impl CompressedIndex {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        hidden_dim: usize,
        n_centroids: usize,
        doc_ids: Vec<String>,
        offsets: Vec<(usize, usize)>,
        centroids: Vec<f32>,
        scales: Vec<(f32, f32)>,
        assignments: Vec<u32>,
        codes: Vec<u8>,
    ) -> Self {
        let mut centroid_docs = vec![Vec::new(); n_centroids];
        for (d, &(start, k)) in offsets.iter().enumerate() {
            for &a in &assignments[start..start + k] {
                let list: &mut Vec<u32> = &mut centroid_docs[a as usize];
                if list.last() != Some(&(d as u32)) {
                    list.push(d as u32);
                }
            }
        }
        Self { hidden_dim, n_centroids, doc_ids, offsets, centroids, scales, assignments, codes, centroid_docs }
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn n_centroids(&self) -> usize {
        self.n_centroids
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn total_rows(&self) -> usize {
        self.assignments.len()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn assignments(&self) -> &[u32] {
        &self.assignments
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    /// Per-dimension `(lo, hi)` of the residual buckets.
    pub fn quant_scales(&self) -> &[(f32, f32)] {
        &self.scales
    }

    /// Width of one residual bucket in dimension `d`.
    pub fn bucket_width(&self, d: usize) -> f32 {
        let (lo, hi) = self.scales[d];
        (hi - lo) / LEVELS
    }

    /// Centroid plus dequantised residual for stored row `r`.
    pub fn reconstruct_row(&self, r: usize) -> Vec<f32> {
        let h = self.hidden_dim;
        let cb = code_bytes(h);
        let c = self.assignments[r] as usize;
        (0..h)
            .map(|d| {
                let code = (self.codes[r * cb + d / 4] >> (2 * (d % 4))) & 0b11;
                self.centroids[c * h + d] + dequantize(code, self.scales[d])
            })
            .collect()
    }

    fn reconstruct_doc(&self, ordinal: usize) -> Vec<f32> {
        let (start, k) = self.offsets[ordinal];
        (start..start + k).flat_map(|r| self.reconstruct_row(r)).collect()
    }

    /// A flat index over the reconstructed rows.
    pub fn decode(&self) -> DenseIndex {
        let vectors = (0..self.total_rows()).flat_map(|r| self.reconstruct_row(r)).collect();
        DenseIndex::from_parts(self.hidden_dim, self.doc_ids.clone(), self.offsets.clone(), vectors)
    }

    /// Documents owning a row in any of the `n_probe` centroids nearest (by
    /// inner product) to some query row, in ordinal order.
    pub fn candidates(&self, q: &RepresentationSet, n_probe: usize) -> Result<Vec<usize>> {
        self.check_query(q, n_probe)?;
        let h = self.hidden_dim;
        let mut docs = BTreeSet::new();
        let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(self.n_centroids);
        for qrow in q.hidden_rows() {
            ranked.clear();
            ranked.extend(self.centroids.chunks_exact(h).enumerate().map(|(c, cent)| (dot(qrow, cent), c)));
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, c) in &ranked[..n_probe] {
                docs.extend(self.centroid_docs[c].iter().map(|&d| d as usize));
            }
        }
        Ok(docs.into_iter().collect())
    }

    fn check_query(&self, q: &RepresentationSet, n_probe: usize) -> Result<()> {
        if q.hidden_dim() != self.hidden_dim {
            return Err(Error::DimensionMismatch(format!(
                "query H = {}, index H = {}",
                q.hidden_dim(),
                self.hidden_dim
            )));
        }
        if n_probe == 0 || n_probe > self.n_centroids {
            return Err(Error::InvalidArgument(format!(
                "n_probe must be in 1..={}, got {n_probe}",
                self.n_centroids
            )));
        }
        Ok(())
    }

    /// MaxSim over reconstructed rows of the probed candidate documents.
    pub fn search(&self, query_id: &str, q: &RepresentationSet, n_probe: usize, cutoff: usize) -> Result<ScoredList> {
        let items = self
            .candidates(q, n_probe)?
            .into_iter()
            .map(|d| {
                let rows = self.reconstruct_doc(d);
                (self.doc_ids[d].clone(), maxsim_rows(q.hidden(), &rows, self.hidden_dim))
            })
            .collect();
        Ok(ScoredList::new(query_id, items, cutoff))
    }

    fn encode(&self) -> (Vec<u8>, StorageReport) {
        let mut w = SectionWriter::new(MAGIC);
        w.write_u32::<LE>(self.hidden_dim as u32).unwrap();
        w.write_u32::<LE>(self.n_centroids as u32).unwrap();
        w.write_u64::<LE>(self.len() as u64).unwrap();
        w.write_u64::<LE>(self.total_rows() as u64).unwrap();
        w.end("header");
        write_doc_table(&mut w, &self.doc_ids);
        write_offsets(&mut w, &self.offsets);
        write_f32s(&mut w, &self.centroids, "centroids");
        for &(lo, hi) in &self.scales {
            w.write_f32::<LE>(lo).unwrap();
            w.write_f32::<LE>(hi).unwrap();
        }
        w.end("quant_scales");
        for &a in &self.assignments {
            w.write_u32::<LE>(a).unwrap();
        }
        w.end("assignments");
        w.extend_from_slice(&self.codes);
        w.end("residual_codes");
        w.finish()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.encode().0
    }

    pub fn storage_report(&self) -> StorageReport {
        self.encode().1
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(FileReader::open(path, MAGIC)?)
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        Self::read(FileReader::from_bytes(bytes, MAGIC)?)
    }

    fn read(mut r: FileReader) -> Result<Self> {
        let h = r.u32()? as usize;
        let c = r.u32()? as usize;
        let n = r.u64()? as usize;
        let rows = r.u64()? as usize;
        if h == 0 || c == 0 || n == 0 {
            return Err(Error::Format("index header has zero dimension, centroids or documents".into()));
        }
        let doc_ids = r.doc_table(n)?;
        let offsets = r.offsets(n, rows)?;
        let centroids = r.f32s(c.saturating_mul(h))?;
        let flat = r.f32s(2 * h)?;
        let scales = flat.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        let assignments: Vec<u32> = r.u32s(rows)?;
        if let Some(bad) = assignments.iter().find(|&&a| a as usize >= c) {
            return Err(Error::Format(format!("centroid id {bad} out of range (C = {c})")));
        }
        let codes = r.bytes(rows.saturating_mul(code_bytes(h)))?;
        r.finish()?;
        Ok(Self::assemble(h, c, doc_ids, offsets, centroids, scales, assignments, codes))
    }
}

/// Byte counts of an index before and after compression.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionReport {
    pub original: StorageReport,
    pub compressed: StorageReport,
}

impl CompressionReport {
    /// Whole-file ratio of the float32 flat index to the compressed index.
    pub fn ratio(&self) -> f64 {
        self.original.total() as f64 / self.compressed.total() as f64
    }

    /// Whole-file ratio if the flat vectors were stored as float16.
    pub fn fp16_ratio(&self) -> f64 {
        let fp16 = self.original.total() - self.original.section("vectors") / 2;
        fp16 as f64 / self.compressed.total() as f64
    }
}

pub fn compression_report(original: &DenseIndex, compressed: &CompressedIndex) -> CompressionReport {
    CompressionReport { original: original.storage_report(), compressed: compressed.storage_report() }
}
