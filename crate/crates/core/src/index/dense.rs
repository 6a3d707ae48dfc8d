//! Flat multi-vector store with exhaustive MaxSim search.
//!
//! File layout:
//!
//! ```text
//! "DIDX" | version u32 | H u32 | n_docs u64 | rows u64
//! doc_table: n_docs * (len u16, UTF-8)
//! row_offsets: n_docs * (start u64, k u32)
//! vectors: rows * H f32
//! ```

use std::borrow::Borrow;
use std::collections::HashSet;
use std::path::Path;

use byteorder::{LittleEndian as LE, WriteBytesExt};
use rayon::prelude::*;

use super::{check_doc_id, write_doc_table, write_f32s, write_file, write_offsets, FileReader, SectionWriter, StorageReport};
use crate::error::{Error, Result};
use crate::repr::RepresentationSet;
use crate::scoring::{dot, maxsim_rows, ScoredList};

const MAGIC: &[u8; 4] = b"DIDX";

#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    hidden_dim: usize,
    doc_ids: Vec<String>,
    offsets: Vec<(usize, usize)>,
    vectors: Vec<f32>,
}

/// Collects every hidden row of every document, preserving input order.
pub fn build_dense<I, S, R>(reps: I) -> Result<DenseIndex>
where
    I: IntoIterator<Item = (S, R)>,
    S: AsRef<str>,
    R: Borrow<RepresentationSet>,
{
    let mut hidden_dim = None;
    let mut doc_ids = Vec::new();
    let mut offsets = Vec::new();
    let mut vectors = Vec::new();
    let mut seen = HashSet::new();
    for (id, rep) in reps {
        let (id, rep) = (id.as_ref(), rep.borrow());
        let h = *hidden_dim.get_or_insert(rep.hidden_dim());
        if rep.hidden_dim() != h {
            return Err(Error::DimensionMismatch(format!(
                "doc {id} has H = {}, index has H = {h}",
                rep.hidden_dim()
            )));
        }
        check_doc_id(id, &mut seen)?;
        offsets.push((vectors.len() / h, rep.k()));
        vectors.extend_from_slice(rep.hidden());
        doc_ids.push(id.to_string());
    }
    let hidden_dim = hidden_dim.ok_or(Error::EmptyIndex)?;
    Ok(DenseIndex { hidden_dim, doc_ids, offsets, vectors })
}

impl DenseIndex {
    /// Assembles an index from parts that already satisfy the layout invariants.
    pub(crate) fn from_parts(
        hidden_dim: usize,
        doc_ids: Vec<String>,
        offsets: Vec<(usize, usize)>,
        vectors: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(offsets.iter().map(|o| o.1).sum::<usize>() * hidden_dim, vectors.len());
        Self { hidden_dim, doc_ids, offsets, vectors }
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn total_rows(&self) -> usize {
        self.vectors.len() / self.hidden_dim
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    /// Per-document `(first row, row count)`.
    pub fn offsets(&self) -> &[(usize, usize)] {
        &self.offsets
    }

    /// All rows, row-major.
    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    /// Rows of document `ordinal`, row-major.
    pub fn doc_rows(&self, ordinal: usize) -> &[f32] {
        let (start, k) = self.offsets[ordinal];
        &self.vectors[start * self.hidden_dim..(start + k) * self.hidden_dim]
    }

    pub fn doc_set(&self, ordinal: usize) -> RepresentationSet {
        RepresentationSet::from_hidden(self.doc_rows(ordinal).to_vec(), self.hidden_dim)
            .expect("index rows are validated on build")
    }

    fn check_query(&self, q: &RepresentationSet) -> Result<()> {
        if q.hidden_dim() != self.hidden_dim {
            return Err(Error::DimensionMismatch(format!(
                "query H = {}, index H = {}",
                q.hidden_dim(),
                self.hidden_dim
            )));
        }
        Ok(())
    }

    /// Scores every document with MaxSim and keeps the top `cutoff`.
    pub fn search(&self, query_id: &str, q: &RepresentationSet, cutoff: usize) -> Result<ScoredList> {
        self.check_query(q)?;
        let items = (0..self.len())
            .map(|d| (self.doc_ids[d].clone(), maxsim_rows(q.hidden(), self.doc_rows(d), self.hidden_dim)))
            .collect();
        Ok(ScoredList::new(query_id, items, cutoff))
    }

    /// Scores every document by the inner product of mean-pooled rows.
    pub fn search_meanpool(&self, query_id: &str, q: &RepresentationSet, cutoff: usize) -> Result<ScoredList> {
        self.check_query(q)?;
        let qm = q.mean_pooled();
        let items = (0..self.len())
            .map(|d| {
                let pm = self.doc_set(d).mean_pooled();
                (self.doc_ids[d].clone(), dot(qm.hidden(), pm.hidden()))
            })
            .collect();
        Ok(ScoredList::new(query_id, items, cutoff))
    }

    /// Searches many queries in parallel; results keep the input order.
    pub fn search_batch(&self, queries: &[(String, RepresentationSet)], cutoff: usize) -> Result<Vec<ScoredList>> {
        queries.par_iter().map(|(id, q)| self.search(id, q, cutoff)).collect()
    }

    fn encode(&self) -> (Vec<u8>, StorageReport) {
        let mut w = SectionWriter::new(MAGIC);
        w.write_u32::<LE>(self.hidden_dim as u32).unwrap();
        w.write_u64::<LE>(self.len() as u64).unwrap();
        w.write_u64::<LE>(self.total_rows() as u64).unwrap();
        w.end("header");
        write_doc_table(&mut w, &self.doc_ids);
        write_offsets(&mut w, &self.offsets);
        write_f32s(&mut w, &self.vectors, "vectors");
        w.finish()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.encode().0
    }

    /// Exact on-disk byte counts per section.
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
        let hidden_dim = r.u32()? as usize;
        let n = r.u64()? as usize;
        let rows = r.u64()? as usize;
        if hidden_dim == 0 || n == 0 {
            return Err(Error::Format("index header has zero dimension or no documents".into()));
        }
        let doc_ids = r.doc_table(n)?;
        let offsets = r.offsets(n, rows)?;
        let vectors = r.f32s(rows.saturating_mul(hidden_dim))?;
        r.finish()?;
        Ok(Self { hidden_dim, doc_ids, offsets, vectors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: Vec<f32>, h: usize) -> RepresentationSet {
        RepresentationSet::from_hidden(rows, h).unwrap()
    }

    #[test]
    fn layout_and_errors() {
        let docs = [("a", set(vec![1.0; 8], 2)), ("b", set(vec![2.0; 8], 2))];
        let idx = build_dense(docs.iter().map(|(i, r)| (i, r))).unwrap();
        assert_eq!(idx.total_rows(), 8);
        assert_eq!(idx.offsets(), &[(0, 4), (4, 4)]);
        assert!(matches!(build_dense(Vec::<(String, RepresentationSet)>::new()), Err(Error::EmptyIndex)));
        let dup = vec![("a", set(vec![1.0; 2], 2)), ("a", set(vec![1.0; 2], 2))];
        assert!(matches!(build_dense(dup), Err(Error::DuplicateDoc(_))));
        let mixed = vec![("a", set(vec![1.0; 2], 2)), ("b", set(vec![1.0; 3], 3))];
        assert!(matches!(build_dense(mixed), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn single_doc_and_identical_query() {
        let idx = build_dense([("only", set(vec![1.0, 2.0], 2))]).unwrap();
        let l = idx.search("q", &set(vec![3.0, 1.0], 2), 10).unwrap();
        assert_eq!(l.items(), &[("only".to_string(), 5.0)]);

        let idx = build_dense([
            ("x", set(vec![0.0, 0.0, 1.0, 0.0], 4)),
            ("target", set(vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0], 4)),
            ("y", set(vec![0.0, 0.0, 0.0, 1.0], 4)),
        ])
        .unwrap();
        let q = set(vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0], 4);
        assert_eq!(idx.search("q", &q, 10).unwrap().doc_ids().next(), Some("target"));
        assert!(matches!(idx.search("q", &set(vec![1.0], 1), 10), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn bytes_round_trip_and_sections() {
        let idx = build_dense([("a", set(vec![1.0; 6], 3)), ("bb", set(vec![0.5; 3], 3))]).unwrap();
        let bytes = idx.to_bytes();
        let back = DenseIndex::from_bytes(bytes.clone()).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.to_bytes(), bytes);
        let rep = idx.storage_report();
        assert_eq!(rep.total(), bytes.len() as u64);
        assert_eq!(rep.section("vectors"), 3 * 3 * 4);
        assert_eq!(rep.section("doc_table"), 2 + 1 + 2 + 2);
        assert_eq!(rep.section("row_offsets"), 2 * 12);
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(DenseIndex::from_bytes(extra).is_err());
        assert!(DenseIndex::from_bytes(bytes[..bytes.len() - 1].to_vec()).is_err());
    }
}
