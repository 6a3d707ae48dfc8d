//! Scoring functions over representation sets.
//!
//! Dense scores use raw inner products (no normalisation). The sparse signal
//! max-pools `log(1 + relu(logit))` over the mask rows and keeps only
//! content-word ids. Hybrid scores interpolate min-max normalised dense and
//! sparse run lists with equal weight.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repr::{Logits, RepresentationSet};
use crate::tokenizer::{Vocabulary, NUM_RESERVED};

const BUNDLED_STOPWORDS: &str = include_str!("stopwords.txt");

/// Weight of each side in the hybrid interpolation.
pub const HYBRID_WEIGHT: f64 = 0.5;

/// Inner product accumulated in `f64`.
pub fn dot<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x.into() * y.into()).sum()
}

/// MaxSim over row-major matrices, also returning for every query row the
/// passage row that attained the maximum (lowest index on ties).
pub fn maxsim_with_argmax<T: Copy + Into<f64>>(q: &[T], p: &[T], h: usize) -> (f64, Vec<usize>) {
    let mut total = 0.0;
    let mut picks = Vec::with_capacity(q.len() / h);
    for qrow in q.chunks_exact(h) {
        let mut best = f64::NEG_INFINITY;
        let mut best_j = 0;
        for (j, prow) in p.chunks_exact(h).enumerate() {
            let s = dot(qrow, prow);
            if s > best {
                best = s;
                best_j = j;
            }
        }
        total += best;
        picks.push(best_j);
    }
    (total / picks.len() as f64, picks)
}

/// MaxSim over row-major matrices of width `h`.
pub fn maxsim_rows<T: Copy + Into<f64>>(q: &[T], p: &[T], h: usize) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for qrow in q.chunks_exact(h) {
        let best = p.chunks_exact(h).map(|prow| dot(qrow, prow)).fold(f64::NEG_INFINITY, f64::max);
        total += best;
        n += 1;
    }
    total / n as f64
}

fn mean_rows(rows: &[f32], h: usize) -> Vec<f64> {
    let mut mean = vec![0f64; h];
    let mut n = 0usize;
    for row in rows.chunks_exact(h) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x as f64;
        }
        n += 1;
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    mean
}

fn check_dims(q: &RepresentationSet, p: &RepresentationSet) -> Result<()> {
    if q.hidden_dim() != p.hidden_dim() {
        return Err(Error::DimensionMismatch(format!(
            "query H = {}, passage H = {}",
            q.hidden_dim(),
            p.hidden_dim()
        )));
    }
    Ok(())
}

/// Each query row is matched to its best passage row; the maxima are averaged.
pub fn dense_maxsim(q: &RepresentationSet, p: &RepresentationSet) -> Result<f64> {
    check_dims(q, p)?;
    Ok(maxsim_rows(q.hidden(), p.hidden(), q.hidden_dim()))
}

/// Inner product of the mean query row and the mean passage row.
pub fn dense_meanpool(q: &RepresentationSet, p: &RepresentationSet) -> Result<f64> {
    check_dims(q, p)?;
    let h = q.hidden_dim();
    Ok(dot(&mean_rows(q.hidden(), h), &mean_rows(p.hidden(), h)))
}

/// `log(1 + relu(x))`.
pub fn log_relu(x: f64) -> f64 {
    if x > 0.0 {
        x.ln_1p()
    } else {
        0.0
    }
}

/// The bundled English stopword list.
pub fn default_stopwords() -> HashSet<String> {
    parse_stopwords(BUNDLED_STOPWORDS)
}

/// Reads a stopword file: UTF-8, one token per line.
pub fn load_stopwords(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    Ok(parse_stopwords(&fs::read_to_string(path)?))
}

fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect()
}

/// The set of vocabulary ids that may carry sparse weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentWordFilter {
    allowed: Vec<bool>,
    fingerprint: u64,
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>, mut hash: u64) -> u64 {
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl ContentWordFilter {
    /// Allows lowercase tokens with at least one alphanumeric character that
    /// are neither stopwords nor reserved ids.
    pub fn from_vocabulary(vocab: &Vocabulary, stopwords: &HashSet<String>) -> Self {
        let allowed = vocab
            .tokens()
            .iter()
            .enumerate()
            .map(|(id, tok)| {
                id as u32 >= NUM_RESERVED
                    && tok.chars().any(char::is_alphanumeric)
                    && !tok.chars().any(char::is_uppercase)
                    && !stopwords.contains(tok)
            })
            .collect();
        Self::from_mask(allowed)
    }

    /// A filter over a vocabulary of `vocab_size` ids that allows exactly `ids`.
    pub fn from_ids(vocab_size: usize, ids: impl IntoIterator<Item = u32>) -> Self {
        let mut allowed = vec![false; vocab_size];
        for id in ids {
            if (id as usize) < vocab_size {
                allowed[id as usize] = true;
            }
        }
        Self::from_mask(allowed)
    }

    /// Allows every id.
    pub fn allow_all(vocab_size: usize) -> Self {
        Self::from_mask(vec![true; vocab_size])
    }

    fn from_mask(allowed: Vec<bool>) -> Self {
        let mut hash = fnv1a((allowed.len() as u64).to_le_bytes(), 0xcbf2_9ce4_8422_2325);
        for (id, &a) in allowed.iter().enumerate() {
            if a {
                hash = fnv1a((id as u32).to_le_bytes(), hash);
            }
        }
        Self { allowed, fingerprint: hash }
    }

    pub fn allows(&self, id: u32) -> bool {
        self.allowed.get(id as usize).copied().unwrap_or(false)
    }

    pub fn vocab_size(&self) -> usize {
        self.allowed.len()
    }

    /// Number of allowed ids.
    pub fn len(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn allowed_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.allowed.iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i as u32)
    }

    /// Identifies the filter; sparse vectors from different filters do not mix.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

/// Non-negative weights over filtered vocabulary ids, sorted by id, with no
/// stored zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    entries: Vec<(u32, f32)>,
    filter: u64,
}

impl SparseVector {
    /// Builds a vector from arbitrary entries: sorts by id, keeps the larger
    /// weight on duplicate ids and drops non-positive weights.
    pub fn from_entries(mut entries: Vec<(u32, f32)>, filter_fingerprint: u64) -> Self {
        entries.retain(|&(_, w)| w > 0.0);
        entries.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
        entries.dedup_by_key(|e| e.0);
        Self { entries, filter: filter_fingerprint }
    }

    pub fn entries(&self) -> &[(u32, f32)] {
        &self.entries
    }

    pub fn filter_fingerprint(&self) -> u64 {
        self.filter
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u32) -> f32 {
        self.entries
            .binary_search_by_key(&id, |e| e.0)
            .map_or(0.0, |i| self.entries[i].1)
    }
}

/// Max-pools `log(1 + relu(logit))` over the rows, restricted to the filter.
pub fn sparse_project(r: &RepresentationSet, filter: &ContentWordFilter) -> Result<SparseVector> {
    let logits = r.logits().ok_or(Error::MissingLogits)?;
    let v = r.vocab_size();
    if v != filter.vocab_size() {
        return Err(Error::DimensionMismatch(format!(
            "logits over {v} ids, filter over {}",
            filter.vocab_size()
        )));
    }
    let mut pooled: BTreeMap<u32, f64> = BTreeMap::new();
    match logits {
        Logits::Dense(rows) => {
            let mut best = vec![f64::NEG_INFINITY; v];
            for row in rows.chunks_exact(v) {
                for (b, &x) in best.iter_mut().zip(row) {
                    *b = b.max(x as f64);
                }
            }
            for id in filter.allowed_ids() {
                pooled.insert(id, best[id as usize]);
            }
        }
        Logits::TopT(rows) => {
            for &(id, x) in rows.iter().flatten() {
                if filter.allows(id) {
                    let e = pooled.entry(id).or_insert(f64::NEG_INFINITY);
                    *e = e.max(x as f64);
                }
            }
        }
    }
    let entries = pooled
        .into_iter()
        .map(|(id, x)| (id, log_relu(x) as f32))
        .filter(|&(_, w)| w > 0.0)
        .collect();
    Ok(SparseVector { entries, filter: filter.fingerprint() })
}

/// Inner product over shared ids, summed in ascending id order.
pub fn sparse_score(q: &SparseVector, p: &SparseVector) -> Result<f64> {
    if q.filter != p.filter {
        return Err(Error::FilterMismatch);
    }
    let (a, b) = (&q.entries, &p.entries);
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                total += a[i].1 as f64 * b[j].1 as f64;
                i += 1;
                j += 1;
            }
        }
    }
    Ok(total)
}

/// A ranked list for one query: score descending, ties by doc id ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredList {
    pub query_id: String,
    items: Vec<(String, f64)>,
    cutoff: usize,
}

/// Orders by score descending, then doc id ascending.
pub fn rank_order(a: &(String, f64), b: &(String, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

impl ScoredList {
    /// Sorts `items` and keeps the top `cutoff`.
    pub fn new(query_id: impl Into<String>, mut items: Vec<(String, f64)>, cutoff: usize) -> Self {
        items.sort_by(rank_order);
        items.truncate(cutoff);
        Self { query_id: query_id.into(), items, cutoff }
    }

    pub fn items(&self) -> &[(String, f64)] {
        &self.items
    }

    pub fn into_items(self) -> Vec<(String, f64)> {
        self.items
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|(d, _)| d.as_str())
    }

    /// Min-max normalised scores; a list whose scores are all equal maps
    /// every item to 0.5.
    pub fn min_max_normalized(&self) -> Vec<(String, f64)> {
        let lo = self.items.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        let hi = self.items.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        self.items
            .iter()
            .map(|(d, s)| {
                let n = if hi > lo { (s - lo) / (hi - lo) } else { 0.5 };
                (d.clone(), n)
            })
            .collect()
    }
}

/// Equal-weight interpolation of min-max normalised dense and sparse lists.
///
/// A document missing from one list contributes 0 on that side. The fused
/// list keeps the larger of the two cutoffs.
pub fn hybrid_fuse(dense: &ScoredList, sparse: &ScoredList) -> Result<ScoredList> {
    if dense.query_id != sparse.query_id {
        return Err(Error::QueryIdMismatch(dense.query_id.clone(), sparse.query_id.clone()));
    }
    let mut fused: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for (d, s) in dense.min_max_normalized() {
        fused.entry(d).or_default().0 = s;
    }
    for (d, s) in sparse.min_max_normalized() {
        fused.entry(d).or_default().1 = s;
    }
    let items = fused
        .into_iter()
        .map(|(d, (a, b))| (d, HYBRID_WEIGHT * a + HYBRID_WEIGHT * b))
        .collect();
    Ok(ScoredList::new(dense.query_id.clone(), items, dense.cutoff.max(sparse.cutoff)))
}

/// Which score drives a ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    Dense,
    Sparse,
    Hybrid,
}

impl RetrievalMode {
    pub const ALL: [RetrievalMode; 3] = [RetrievalMode::Dense, RetrievalMode::Sparse, RetrievalMode::Hybrid];
}

impl fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RetrievalMode::Dense => "dense",
            RetrievalMode::Sparse => "sparse",
            RetrievalMode::Hybrid => "hybrid",
        })
    }
}

impl FromStr for RetrievalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(RetrievalMode::Dense),
            "sparse" => Ok(RetrievalMode::Sparse),
            "hybrid" => Ok(RetrievalMode::Hybrid),
            _ => Err(Error::InvalidArgument(format!("unknown retrieval mode {s:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repr::Source;
    use proptest::prelude::*;

    fn set(rows: &[&[f32]]) -> RepresentationSet {
        let h = rows[0].len();
        RepresentationSet::from_hidden(rows.iter().flat_map(|r| r.iter().copied()).collect(), h).unwrap()
    }

    fn with_logits(rows: &[&[f32]]) -> RepresentationSet {
        let v = rows[0].len();
        let logits = rows.iter().flat_map(|r| r.iter().copied()).collect();
        RepresentationSet::new(vec![0.0; rows.len()], 1, Some(Logits::Dense(logits)), v, Source::Parallel).unwrap()
    }

    fn list(q: &str, items: &[(&str, f64)]) -> ScoredList {
        ScoredList::new(q, items.iter().map(|(d, s)| (d.to_string(), *s)).collect(), 1000)
    }

    #[test]
    fn maxsim_hand_cases() {
        assert_eq!(dense_maxsim(&set(&[&[2.0, 3.0]]), &set(&[&[1.0, 1.0]])).unwrap(), 5.0);
        assert_eq!(dense_maxsim(&set(&[&[1.0, 0.0], &[0.0, 1.0]]), &set(&[&[1.0, 0.0]])).unwrap(), 0.5);
        assert!(matches!(
            dense_maxsim(&set(&[&[1.0]]), &set(&[&[1.0, 0.0]])),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn meanpool_hand_cases() {
        assert_eq!(dense_meanpool(&set(&[&[1.0, 0.0], &[0.0, 1.0]]), &set(&[&[1.0, 1.0]])).unwrap(), 1.0);
        let (q, p) = (set(&[&[2.0, 3.0]]), set(&[&[1.0, 1.0]]));
        assert_eq!(dense_meanpool(&q, &p).unwrap(), dense_maxsim(&q, &p).unwrap());
    }

    #[test]
    fn maxsim_tie_picks_lowest_row() {
        let (s, picks) = maxsim_with_argmax(&[1.0f64, 0.0], &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0], 2);
        assert_eq!(s, 1.0);
        assert_eq!(picks, vec![1]);
    }

    #[test]
    fn sparse_hand_cases() {
        let f = ContentWordFilter::allow_all(3);
        let e = std::f32::consts::E;
        let v = sparse_project(&with_logits(&[&[0.0, e - 1.0, -5.0]]), &f).unwrap();
        assert_eq!(v.len(), 1);
        assert!((v.get(1) - 1.0).abs() < 1e-6);

        let f2 = ContentWordFilter::allow_all(2);
        let v = sparse_project(&with_logits(&[&[1.0, 0.0], &[0.0, 2.0]]), &f2).unwrap();
        assert_eq!(v.entries(), &[(0, 2f64.ln() as f32), (1, 3f64.ln() as f32)]);

        let f3 = ContentWordFilter::from_ids(3, [0, 1]);
        let v = sparse_project(&with_logits(&[&[1.0, 1.0, 1e6]]), &f3).unwrap();
        assert_eq!(v.get(2), 0.0);
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn sparse_needs_logits_and_same_filter() {
        let f = ContentWordFilter::allow_all(2);
        assert!(matches!(sparse_project(&set(&[&[1.0, 2.0]]), &f), Err(Error::MissingLogits)));
        let a = SparseVector::from_entries(vec![(0, 1.0)], 1);
        let b = SparseVector::from_entries(vec![(0, 1.0)], 2);
        assert!(matches!(sparse_score(&a, &b), Err(Error::FilterMismatch)));
    }

    #[test]
    fn sparse_score_cases() {
        let a = SparseVector::from_entries(vec![(1, 1.0)], 0);
        let b = SparseVector::from_entries(vec![(2, 5.0)], 0);
        assert_eq!(sparse_score(&a, &b).unwrap(), 0.0);
        let c = SparseVector::from_entries(vec![(1, 2.0)], 0);
        assert_eq!(sparse_score(&a, &c).unwrap(), 2.0);
    }

    #[test]
    fn top_t_logits_project() {
        let f = ContentWordFilter::from_ids(10, [3, 5]);
        let r = RepresentationSet::new(
            vec![0.0, 0.0],
            1,
            Some(Logits::TopT(vec![vec![(3, 1.0), (4, 9.0)], vec![(3, 2.0), (5, -1.0)]])),
            10,
            Source::Parallel,
        )
        .unwrap();
        let v = sparse_project(&r, &f).unwrap();
        assert_eq!(v.entries(), &[(3, 3f64.ln() as f32)]);
    }

    #[test]
    fn content_filter_rules() {
        let vocab = Vocabulary::build(["the cat sat on a mat . , 42"], 100);
        let f = ContentWordFilter::from_vocabulary(&vocab, &default_stopwords());
        for (tok, expect) in [("cat", true), ("mat", true), ("42", true), ("the", false), ("on", false), (".", false), (",", false)] {
            assert_eq!(f.allows(vocab.id(tok).unwrap()), expect, "{tok}");
        }
        for id in 0..NUM_RESERVED {
            assert!(!f.allows(id));
        }
        assert!(default_stopwords().len() >= 170);
    }

    #[test]
    fn fusion_hand_cases() {
        let d = list("q", &[("A", 4.0), ("B", 2.0)]);
        let s = list("q", &[("A", 10.0), ("B", 30.0)]);
        let h = hybrid_fuse(&d, &s).unwrap();
        assert_eq!(h.items(), &[("A".to_string(), 0.5), ("B".to_string(), 0.5)]);

        let d = list("q", &[("A", 3.0), ("B", 1.0)]);
        let s = list("q", &[("B", 1.0), ("C", 0.0)]);
        let h = hybrid_fuse(&d, &s).unwrap();
        let got: BTreeMap<_, _> = h.items().iter().cloned().collect();
        assert_eq!(got["A"], 0.5);
        assert_eq!(got["B"], 0.5);
        assert_eq!(got["C"], 0.0);
    }

    #[test]
    fn fusion_degenerate_list() {
        // Dense list is constant: every dense side becomes 0.5.
        let d = list("q", &[("A", 7.0), ("B", 7.0), ("C", 7.0)]);
        let s = list("q", &[("A", 1.0), ("B", 3.0), ("C", 2.0)]);
        let h = hybrid_fuse(&d, &s).unwrap();
        assert_eq!(
            h.items(),
            &[("B".to_string(), 0.75), ("C".to_string(), 0.5), ("A".to_string(), 0.25)]
        );
        assert!(matches!(hybrid_fuse(&d, &list("other", &[])), Err(Error::QueryIdMismatch(..))));
    }

    #[test]
    fn scored_list_sorting() {
        let l = ScoredList::new("q", vec![("b".into(), 1.0), ("a".into(), 1.0), ("c".into(), 2.0)], 2);
        assert_eq!(l.doc_ids().collect::<Vec<_>>(), vec!["c", "a"]);
        assert_eq!(l.cutoff(), 2);
    }

    fn rows_strategy(max_k: usize, h: usize) -> impl Strategy<Value = Vec<f32>> {
        (1..=max_k).prop_flat_map(move |k| proptest::collection::vec(-3.0f32..3.0, k * h))
    }

    proptest! {
        #[test]
        fn maxsim_row_permutation_invariant(q in rows_strategy(6, 4), p in rows_strategy(6, 4), rot in 0usize..6) {
            let qs = RepresentationSet::from_hidden(q.clone(), 4).unwrap();
            let ps = RepresentationSet::from_hidden(p.clone(), 4).unwrap();
            let base = dense_maxsim(&qs, &ps).unwrap();
            let mut rows: Vec<&[f32]> = p.chunks(4).collect();
            let r = rot % rows.len();
            rows.rotate_left(r);
            let p2 = RepresentationSet::from_hidden(rows.concat(), 4).unwrap();
            prop_assert_eq!(dense_maxsim(&qs, &p2).unwrap(), base);
            // duplicate a passage row
            let mut dup = p.clone();
            dup.extend_from_slice(&p[..4]);
            let p3 = RepresentationSet::from_hidden(dup, 4).unwrap();
            prop_assert_eq!(dense_maxsim(&qs, &p3).unwrap(), base);
        }

        #[test]
        fn sparse_monotone_and_permutation_invariant(
            logits in proptest::collection::vec(-2.0f32..2.0, 12), bump_at in 0usize..12, bump in 0.0f32..2.0,
        ) {
            let f = ContentWordFilter::allow_all(4);
            let mk = |l: Vec<f32>| RepresentationSet::new(vec![0.0; 3], 1, Some(Logits::Dense(l)), 4, Source::Parallel).unwrap();
            let base = sparse_project(&mk(logits.clone()), &f).unwrap();
            let mut bumped = logits.clone();
            bumped[bump_at] += bump;
            let after = sparse_project(&mk(bumped), &f).unwrap();
            for id in 0..4 {
                prop_assert!(after.get(id) >= base.get(id));
                prop_assert!(base.get(id) >= 0.0);
            }
            let mut rows: Vec<&[f32]> = logits.chunks(4).collect();
            rows.reverse();
            prop_assert_eq!(sparse_project(&mk(rows.concat()), &f).unwrap(), base);
        }
    }
}
