//! Query-time pipeline: encode texts, search per-budget passage indexes and
//! fuse dense with sparse rankings.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evalkit::{sweep_budgets, BudgetGrid, Judgments, Metric};
use crate::index::{build_dense, build_sparse, DenseIndex, SparseIndex};
use crate::model::TextEncoder;
use crate::prompt::Target;
use crate::repr::{Item, RepresentationSet};
use crate::scoring::{hybrid_fuse, sparse_project, ContentWordFilter, RetrievalMode, ScoredList};

/// Documents kept per query and retriever before fusion.
pub const DEFAULT_CUTOFF: usize = 1000;

/// Dense and sparse indexes over one passage budget.
#[derive(Debug, Clone, PartialEq)]
pub struct PassageIndex {
    pub dense: DenseIndex,
    pub sparse: SparseIndex,
}

const DENSE_FILE: &str = "dense.didx";
const SPARSE_FILE: &str = "sparse.sidx";

impl PassageIndex {
    pub fn from_items(items: &[Item], filter: &ContentWordFilter) -> Result<Self> {
        let dense = build_dense(items.iter().map(|(id, r)| (id, r)))?;
        let sparse = build_sparse(items.iter().map(|(id, r)| (id, r)), filter)?;
        Ok(Self { dense, sparse })
    }

    /// Writes `dense.didx` and `sparse.sidx` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.dense.save(dir.join(DENSE_FILE))?;
        self.sparse.save(dir.join(SPARSE_FILE))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        for name in [DENSE_FILE, SPARSE_FILE] {
            if !dir.join(name).exists() {
                return Err(Error::InvalidArgument(format!(
                    "{} has no {name}; build it with the index command",
                    dir.display()
                )));
            }
        }
        Ok(Self { dense: DenseIndex::load(dir.join(DENSE_FILE))?, sparse: SparseIndex::load(dir.join(SPARSE_FILE))? })
    }

    /// Ranks passages for one encoded query. Hybrid fuses the two top-`cutoff`
    /// lists and keeps `cutoff` documents.
    pub fn search(
        &self,
        query_id: &str,
        q: &RepresentationSet,
        mode: RetrievalMode,
        filter: &ContentWordFilter,
        cutoff: usize,
    ) -> Result<ScoredList> {
        let dense = || self.dense.search(query_id, q, cutoff);
        let sparse = || self.sparse.search(query_id, &sparse_project(q, filter)?, cutoff);
        match mode {
            RetrievalMode::Dense => dense(),
            RetrievalMode::Sparse => sparse(),
            RetrievalMode::Hybrid => hybrid_fuse(&dense()?, &sparse()?),
        }
    }
}

/// Passage indexes keyed by passage budget.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    indexes: BTreeMap<usize, PassageIndex>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, k_p: usize, index: PassageIndex) {
        self.indexes.insert(k_p, index);
    }

    pub fn get(&self, k_p: usize) -> Result<&PassageIndex> {
        self.indexes.get(&k_p).ok_or(Error::MissingIndex(k_p))
    }

    pub fn budgets(&self) -> impl Iterator<Item = usize> + '_ {
        self.indexes.keys().copied()
    }
}

/// A model plus the content-word filter derived from its vocabulary.
#[derive(Debug, Clone)]
pub struct Retriever<'a> {
    pub model: &'a TextEncoder,
    pub filter: ContentWordFilter,
    pub cutoff: usize,
}

impl<'a> Retriever<'a> {
    pub fn new(model: &'a TextEncoder, filter: ContentWordFilter) -> Self {
        Self { model, filter, cutoff: DEFAULT_CUTOFF }
    }

    pub fn with_cutoff(mut self, cutoff: usize) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn encode_queries(&self, queries: &[(String, String)], k_q: usize) -> Result<Vec<Item>> {
        self.model.encode_all(queries, Target::Query, k_q)
    }

    pub fn index(&self, passages: &[(String, String)], k_p: usize) -> Result<PassageIndex> {
        PassageIndex::from_items(&self.model.encode_all(passages, Target::Passage, k_p)?, &self.filter)
    }

    /// Builds one index per passage budget.
    pub fn corpus(&self, passages: &[(String, String)], budgets: &[usize]) -> Result<Corpus> {
        let mut corpus = Corpus::new();
        for &k_p in budgets {
            corpus.insert(k_p, self.index(passages, k_p)?);
        }
        Ok(corpus)
    }

    /// Searches encoded queries in parallel, keeping input order.
    pub fn search(&self, index: &PassageIndex, queries: &[Item], mode: RetrievalMode) -> Result<Vec<ScoredList>> {
        queries
            .par_iter()
            .map(|(id, q)| index.search(id, q, mode, &self.filter, self.cutoff))
            .collect()
    }

    pub fn run(
        &self,
        index: &PassageIndex,
        queries: &[(String, String)],
        k_q: usize,
        mode: RetrievalMode,
    ) -> Result<Vec<ScoredList>> {
        self.search(index, &self.encode_queries(queries, k_q)?, mode)
    }

    /// Evaluates every (k_q, k_p) cell. Queries are encoded once per k_q.
    #[allow(clippy::too_many_arguments)]
    pub fn sweep(
        &self,
        corpus: &Corpus,
        queries: &[(String, String)],
        judgments: &Judgments,
        q_axis: &[usize],
        p_axis: &[usize],
        mode: RetrievalMode,
        metric: Metric,
    ) -> Result<BudgetGrid> {
        let mut encoded: BTreeMap<usize, Vec<Item>> = BTreeMap::new();
        sweep_budgets(q_axis, p_axis, mode, metric, judgments, |k_q, k_p| {
            let index = corpus.get(k_p)?;
            if let Entry::Vacant(slot) = encoded.entry(k_q) {
                slot.insert(self.encode_queries(queries, k_q)?);
            }
            self.search(index, &encoded[&k_q], mode)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, EncoderParams};
    use crate::model::PromptSettings;
    use crate::prompt::PromptTemplate;
    use crate::scoring::default_stopwords;
    use crate::tokenizer::Vocabulary;

    fn texts(xs: &[(&str, &str)]) -> Vec<(String, String)> {
        xs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    fn model() -> TextEncoder {
        let corpus = ["the corm is a swollen stem", "bulbs store food in leaves", "a rhizome grows sideways"];
        let vocab = Vocabulary::build_with_required(corpus, 100, PromptTemplate::scaffold_texts());
        let params = EncoderParams::init(EncoderConfig::new(vocab.len(), 8, 1, 5)).unwrap();
        TextEncoder::new(vocab, params, PromptSettings::default()).unwrap()
    }

    #[test]
    fn hybrid_equals_fusing_dense_and_sparse() {
        let m = model();
        let r = Retriever::new(&m, ContentWordFilter::from_vocabulary(&m.vocab, &default_stopwords())).with_cutoff(2);
        let passages = texts(&[("p1", "the corm is a swollen stem"), ("p2", "bulbs store food in leaves"), ("p3", "a rhizome grows sideways")]);
        let index = r.index(&passages, 2).unwrap();
        let queries = r.encode_queries(&texts(&[("q", "swollen corm")]), 3).unwrap();
        let dense = r.search(&index, &queries, RetrievalMode::Dense).unwrap();
        let sparse = r.search(&index, &queries, RetrievalMode::Sparse).unwrap();
        let hybrid = r.search(&index, &queries, RetrievalMode::Hybrid).unwrap();
        assert_eq!(hybrid[0], hybrid_fuse(&dense[0], &sparse[0]).unwrap());
        assert!(hybrid[0].len() <= 2 && dense[0].len() == 2);
    }

    #[test]
    fn sweep_reports_missing_budget() {
        let m = model();
        let r = Retriever::new(&m, ContentWordFilter::allow_all(m.vocab.len()));
        let passages = texts(&[("p1", "corm"), ("p2", "bulbs")]);
        let corpus = r.corpus(&passages, &[1]).unwrap();
        let mut judg = Judgments::new();
        judg.insert("q", "p1", 1);
        let queries = texts(&[("q", "corm")]);
        let ok = r.sweep(&corpus, &queries, &judg, &[1, 2], &[1], RetrievalMode::Dense, Metric::Mrr10).unwrap();
        assert_eq!(ok.cells.len(), 2);
        let err = r.sweep(&corpus, &queries, &judg, &[1], &[1, 4], RetrievalMode::Dense, Metric::Mrr10);
        assert!(matches!(err, Err(Error::MissingIndex(4))));
    }

    #[test]
    fn index_directory_round_trip() {
        let m = model();
        let r = Retriever::new(&m, ContentWordFilter::allow_all(m.vocab.len()));
        let index = r.index(&texts(&[("p1", "corm"), ("p2", "bulbs")]), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        index.save(dir.path()).unwrap();
        assert_eq!(PassageIndex::load(dir.path()).unwrap(), index);
        assert!(PassageIndex::load(dir.path().join("nope")).is_err());
    }
}
