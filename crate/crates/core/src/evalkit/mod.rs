//! Retrieval evaluation: relevance judgments, TREC run files, MRR@10 and
//! NDCG@10, budget grids with per-query oracles, and rank statistics.

mod decompose;
mod grid;
mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::ScoredList;

pub use decompose::{decompose_scoring, Decomposition};
pub use grid::{oracle, sweep_budgets, BudgetGrid, OracleMode, OracleResult, DEFAULT_AXIS};
pub use stats::{
    bootstrap_correlation, kendall_tau_b, query_features, rank_correlation, spearman, BootstrapInterval,
    QueryFeatures, BOOTSTRAP_RESAMPLES,
};

/// Metric depth.
pub const CUTOFF: usize = 10;

/// Graded relevance per (query, doc); absent pairs have grade 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Judgments {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Judgments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.grades.entry(query_id.into()).or_default().insert(doc_id.into(), grade);
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.grades.get(query_id).and_then(|m| m.get(doc_id)).copied().unwrap_or(0)
    }

    /// Judged docs of a query.
    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.grades.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.grades.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.grades.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grades.is_empty()
    }

    /// Reads TREC qrels: `qid 0 docid grade` per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = BufReader::new(fs::File::open(path)?);
        let mut j = Self::new();
        for (n, line) in f.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            let err = |msg: String| Error::Parse { line: n + 1, msg };
            if cols.len() != 4 {
                return Err(err(format!("expected 4 columns, found {}", cols.len())));
            }
            let grade: i64 = cols[3].parse().map_err(|_| err(format!("bad grade {:?}", cols[3])))?;
            if grade < 0 {
                return Err(err(format!("negative grade {grade}")));
            }
            j.insert(cols[0], cols[2], grade as u32);
        }
        Ok(j)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for (q, docs) in &self.grades {
            for (d, g) in docs {
                writeln!(w, "{q} 0 {d} {g}")?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes TREC run lines `qid Q0 docid rank score tag`. Scores are written at
/// full precision so a reloaded run ranks and fuses exactly like the original.
pub fn write_run<W: Write>(mut w: W, lists: &[ScoredList], tag: &str) -> Result<()> {
    if tag.is_empty() || tag.contains(char::is_whitespace) {
        return Err(Error::InvalidArgument(format!("run tag must be one non-empty word, got {tag:?}")));
    }
    for list in lists {
        for (rank, (doc, score)) in list.items().iter().enumerate() {
            writeln!(w, "{} Q0 {} {} {} {}", list.query_id, doc, rank + 1, score, tag)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_run(path: impl AsRef<Path>, lists: &[ScoredList], tag: &str) -> Result<()> {
    write_run(BufWriter::new(fs::File::create(path)?), lists, tag)
}

/// Reads a TREC run; lists come back in first-appearance order of their
/// query ids and are re-sorted by score.
pub fn load_run(path: impl AsRef<Path>) -> Result<Vec<ScoredList>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut order: Vec<String> = Vec::new();
    let mut items: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: String| Error::Parse { line: n + 1, msg };
        if cols.len() != 6 {
            return Err(err(format!("expected 6 columns, found {}", cols.len())));
        }
        cols[3].parse::<usize>().map_err(|_| err(format!("bad rank {:?}", cols[3])))?;
        let score: f64 = cols[4].parse().map_err(|_| err(format!("bad score {:?}", cols[4])))?;
        if !score.is_finite() {
            return Err(err("score is not finite".into()));
        }
        if !items.contains_key(cols[0]) {
            order.push(cols[0].to_string());
        }
        items.entry(cols[0].to_string()).or_default().push((cols[2].to_string(), score));
    }
    Ok(order
        .into_iter()
        .map(|q| {
            let list = items.remove(&q).unwrap();
            let n = list.len();
            ScoredList::new(q, list, n)
        })
        .collect())
}

/// Reciprocal rank of the first doc with grade ≥ 1 in the top 10, else 0.
pub fn mrr_at_10(list: &ScoredList, judgments: &Judgments) -> f64 {
    list.doc_ids()
        .take(CUTOFF)
        .position(|d| judgments.grade(&list.query_id, d) >= 1)
        .map_or(0.0, |r| 1.0 / (r + 1) as f64)
}

fn dcg(grades: impl Iterator<Item = u32>) -> f64 {
    grades.take(CUTOFF).enumerate().map(|(r, g)| g as f64 / ((r + 2) as f64).log2()).sum()
}

/// DCG@10 with linear gain over the ideal DCG@10; 0 without relevant docs.
pub fn ndcg_at_10(list: &ScoredList, judgments: &Judgments) -> f64 {
    let mut ideal: Vec<u32> = judgments.for_query(&list.query_id).map_or(Vec::new(), |m| m.values().copied().collect());
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter());
    if idcg == 0.0 {
        return 0.0;
    }
    dcg(list.doc_ids().map(|d| judgments.grade(&list.query_id, d))) / idcg
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Mrr10,
    Ndcg10,
}

impl Metric {
    pub fn of(self, list: &ScoredList, judgments: &Judgments) -> f64 {
        match self {
            Metric::Mrr10 => mrr_at_10(list, judgments),
            Metric::Ndcg10 => ndcg_at_10(list, judgments),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Mrr10 => "mrr@10",
            Metric::Ndcg10 => "ndcg@10",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mrr@10" | "mrr10" | "mrr" => Ok(Metric::Mrr10),
            "ndcg@10" | "ndcg10" | "ndcg" => Ok(Metric::Ndcg10),
            _ => Err(Error::InvalidArgument(format!("unknown metric {s:?}"))),
        }
    }
}

/// Per-query and mean metric values.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metric: Metric,
    /// Keyed by query id; only judged queries present in the run.
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
}

/// Evaluates every judged query of the run; the mean is summed in query-id
/// order. Queries without judgments are ignored.
pub fn evaluate(lists: &[ScoredList], judgments: &Judgments, metric: Metric) -> Evaluation {
    let per_query: BTreeMap<String, f64> = lists
        .iter()
        .filter(|l| judgments.for_query(&l.query_id).is_some())
        .map(|l| (l.query_id.clone(), metric.of(l, judgments)))
        .collect();
    let mean = if per_query.is_empty() { 0.0 } else { per_query.values().sum::<f64>() / per_query.len() as f64 };
    Evaluation { metric, per_query, mean }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(q: &str, docs: &[&str]) -> ScoredList {
        let n = docs.len();
        ScoredList::new(q, docs.iter().enumerate().map(|(i, d)| (d.to_string(), (n - i) as f64)).collect(), 1000)
    }

    #[test]
    fn metric_hand_cases() {
        let mut j = Judgments::new();
        j.insert("q", "rel", 1);
        assert_eq!(mrr_at_10(&list("q", &["a", "b", "rel"]), &j), 1.0 / 3.0);
        let eleven: Vec<String> = (0..10).map(|i| format!("x{i}")).chain(["rel".to_string()]).collect();
        let refs: Vec<&str> = eleven.iter().map(String::as_str).collect();
        assert_eq!(mrr_at_10(&list("q", &refs), &j), 0.0);
        assert!((ndcg_at_10(&list("q", &["a", "rel"]), &j) - 0.6309297535714575).abs() < 1e-12);
        assert_eq!(ndcg_at_10(&list("q", &["rel", "a"]), &j), 1.0);
        assert_eq!(ndcg_at_10(&list("other", &["rel"]), &j), 0.0);
    }

    #[test]
    fn evaluation_skips_unjudged() {
        let mut j = Judgments::new();
        j.insert("q1", "a", 1);
        j.insert("q2", "b", 1);
        let e = evaluate(&[list("q1", &["a"]), list("q2", &["x", "b"]), list("q3", &["a"])], &j, Metric::Mrr10);
        assert_eq!(e.per_query.len(), 2);
        assert_eq!(e.mean, 0.75);
    }

    #[test]
    fn trec_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut j = Judgments::new();
        j.insert("q1", "d1", 2);
        j.insert("q1", "d2", 0);
        let qp = dir.path().join("qrels.txt");
        j.save(&qp).unwrap();
        assert_eq!(Judgments::load(&qp).unwrap(), j);

        let rp = dir.path().join("run.txt");
        let lists = vec![list("q1", &["d2", "d1"]), list("q0", &["d3"])];
        save_run(&rp, &lists, "dense-k4").unwrap();
        let text = fs::read_to_string(&rp).unwrap();
        assert_eq!(text.lines().next().unwrap(), "q1 Q0 d2 1 2 dense-k4");
        let back = load_run(&rp).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip(&lists) {
            assert_eq!((&a.query_id, a.items()), (&b.query_id, b.items()));
        }
        assert!(save_run(&rp, &lists, "two words").is_err());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad");
        fs::write(&p, "q 0 d 1\nq 0 d\n").unwrap();
        assert!(matches!(Judgments::load(&p), Err(Error::Parse { line: 2, .. })));
        fs::write(&p, "q 0 d -1\n").unwrap();
        assert!(matches!(Judgments::load(&p), Err(Error::Parse { line: 1, .. })));
        fs::write(&p, "q Q0 d 1 1.0 t\nq Q0 d x 1.0 t\n").unwrap();
        assert!(matches!(load_run(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn metric_names() {
        assert_eq!("MRR@10".parse::<Metric>().unwrap(), Metric::Mrr10);
        assert_eq!(Metric::Ndcg10.to_string(), "ndcg@10");
        assert!("map".parse::<Metric>().is_err());
    }
}
