//! Vocabulary-keyed inverted index over sparse passage vectors.
//!
//! File layout:
//!
//! ```text
//! "SIDX" | version u32 | V u32 | filter fingerprint u64 | n_docs u64 | n_terms u32
//! doc_table: n_docs * (len u16, UTF-8)
//! postings: n_terms * (term u32, n u32, n * (doc ordinal u32, weight f32))
//! ```

use std::borrow::Borrow;
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use byteorder::{LittleEndian as LE, WriteBytesExt};

use super::{check_doc_id, write_doc_table, write_file, FileReader, SectionWriter, StorageReport};
use crate::error::{Error, Result};
use crate::repr::RepresentationSet;
use crate::scoring::{sparse_project, ContentWordFilter, ScoredList, SparseVector};

const MAGIC: &[u8; 4] = b"SIDX";

#[derive(Debug, Clone, PartialEq)]
pub struct SparseIndex {
    vocab_size: usize,
    filter: u64,
    doc_ids: Vec<String>,
    postings: BTreeMap<u32, Vec<(u32, f32)>>,
}

/// Projects every document through the filter and inverts the result.
pub fn build_sparse<I, S, R>(reps: I, filter: &ContentWordFilter) -> Result<SparseIndex>
where
    I: IntoIterator<Item = (S, R)>,
    S: AsRef<str>,
    R: Borrow<RepresentationSet>,
{
    let vectors = reps
        .into_iter()
        .map(|(id, r)| Ok((id.as_ref().to_string(), sparse_project(r.borrow(), filter)?)))
        .collect::<Result<Vec<_>>>()?;
    build_sparse_from_vectors(vectors, filter)
}

/// Inverts already projected vectors; every vector must come from `filter`.
pub fn build_sparse_from_vectors<I, S>(vectors: I, filter: &ContentWordFilter) -> Result<SparseIndex>
where
    I: IntoIterator<Item = (S, SparseVector)>,
    S: AsRef<str>,
{
    let mut doc_ids = Vec::new();
    let mut postings: BTreeMap<u32, Vec<(u32, f32)>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for (id, v) in vectors {
        let id = id.as_ref();
        if v.filter_fingerprint() != filter.fingerprint() {
            return Err(Error::FilterMismatch);
        }
        check_doc_id(id, &mut seen)?;
        let ord = doc_ids.len() as u32;
        for &(term, w) in v.entries() {
            postings.entry(term).or_default().push((ord, w));
        }
        doc_ids.push(id.to_string());
    }
    if doc_ids.is_empty() {
        return Err(Error::EmptyIndex);
    }
    Ok(SparseIndex { vocab_size: filter.vocab_size(), filter: filter.fingerprint(), doc_ids, postings })
}

impl SparseIndex {
    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn filter_fingerprint(&self) -> u64 {
        self.filter
    }

    /// Posting list of `term`, sorted by doc ordinal.
    pub fn postings(&self, term: u32) -> &[(u32, f32)] {
        self.postings.get(&term).map_or(&[], Vec::as_slice)
    }

    pub fn n_terms(&self) -> usize {
        self.postings.len()
    }

    /// Ranks documents sharing at least one term with the query.
    ///
    /// Query terms are visited in ascending id order, so every document score
    /// equals `sparse_score` bit for bit.
    pub fn search(&self, query_id: &str, q: &SparseVector, cutoff: usize) -> Result<ScoredList> {
        if q.filter_fingerprint() != self.filter {
            return Err(Error::FilterMismatch);
        }
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for &(term, wq) in q.entries() {
            for &(doc, wp) in self.postings(term) {
                *acc.entry(doc).or_insert(0.0) += wq as f64 * wp as f64;
            }
        }
        let items = acc.into_iter().map(|(d, s)| (self.doc_ids[d as usize].clone(), s)).collect();
        Ok(ScoredList::new(query_id, items, cutoff))
    }

    fn encode(&self) -> (Vec<u8>, StorageReport) {
        let mut w = SectionWriter::new(MAGIC);
        w.write_u32::<LE>(self.vocab_size as u32).unwrap();
        w.write_u64::<LE>(self.filter).unwrap();
        w.write_u64::<LE>(self.len() as u64).unwrap();
        w.write_u32::<LE>(self.postings.len() as u32).unwrap();
        w.end("header");
        write_doc_table(&mut w, &self.doc_ids);
        for (&term, list) in &self.postings {
            w.write_u32::<LE>(term).unwrap();
            w.write_u32::<LE>(list.len() as u32).unwrap();
            for &(d, x) in list {
                w.write_u32::<LE>(d).unwrap();
                w.write_f32::<LE>(x).unwrap();
            }
        }
        w.end("postings");
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
        let vocab_size = r.u32()? as usize;
        let filter = r.u64()?;
        let n = r.u64()? as usize;
        let n_terms = r.u32()?;
        let doc_ids = r.doc_table(n)?;
        let mut postings = BTreeMap::new();
        let mut prev_term = None;
        for _ in 0..n_terms {
            let term = r.u32()?;
            if prev_term.is_some_and(|p| p >= term) || term as usize >= vocab_size {
                return Err(Error::Format(format!("posting term {term} out of order or range")));
            }
            prev_term = Some(term);
            let len = r.u32()? as usize;
            let mut list = Vec::with_capacity(len.min(n));
            let mut prev_doc = None;
            for _ in 0..len {
                let d = r.u32()?;
                let x = f32::from_bits(r.u32()?);
                if d as usize >= n || prev_doc.is_some_and(|p| p >= d) || !(x > 0.0 && x.is_finite()) {
                    return Err(Error::Format(format!("term {term}: bad posting ({d}, {x})")));
                }
                prev_doc = Some(d);
                list.push((d, x));
            }
            postings.insert(term, list);
        }
        r.finish()?;
        Ok(Self { vocab_size, filter, doc_ids, postings })
    }
}
