//! (k_q, k_p) budget sweeps and per-query budget oracles.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use super::{evaluate, Evaluation, Judgments, Metric};
use crate::error::{Error, Result};
use crate::scoring::{RetrievalMode, ScoredList};

/// Budget values swept when none are given.
pub const DEFAULT_AXIS: [usize; 5] = [1, 2, 4, 8, 16];

type Cell = (usize, usize);

const PER_QUERY_HEADER: &str = "k_q,k_p,mode,metric,value,query_id";

/// Metric values over a (k_q, k_p) grid, per query and aggregated.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetGrid {
    pub q_axis: Vec<usize>,
    pub p_axis: Vec<usize>,
    pub mode: RetrievalMode,
    pub metric: Metric,
    pub cells: BTreeMap<Cell, Evaluation>,
}

fn normalize_axis(axis: &[usize], name: &str) -> Result<Vec<usize>> {
    let set: BTreeSet<usize> = axis.iter().copied().collect();
    if set.is_empty() || set.contains(&0) {
        return Err(Error::InvalidArgument(format!("{name} axis must be nonempty with budgets ≥ 1")));
    }
    Ok(set.into_iter().collect())
}

/// Evaluates every cell. `run(k_q, k_p)` must return one ranked list per
/// query, typically by encoding queries at `k_q` and searching an index
/// built at `k_p`.
pub fn sweep_budgets<F>(
    q_axis: &[usize],
    p_axis: &[usize],
    mode: RetrievalMode,
    metric: Metric,
    judgments: &Judgments,
    mut run: F,
) -> Result<BudgetGrid>
where
    F: FnMut(usize, usize) -> Result<Vec<ScoredList>>,
{
    let q_axis = normalize_axis(q_axis, "k_q")?;
    let p_axis = normalize_axis(p_axis, "k_p")?;
    let mut cells = BTreeMap::new();
    for &kq in &q_axis {
        for &kp in &p_axis {
            let lists = run(kq, kp)?;
            cells.insert((kq, kp), evaluate(&lists, judgments, metric));
        }
    }
    Ok(BudgetGrid { q_axis, p_axis, mode, metric, cells })
}

impl BudgetGrid {
    /// Builds a grid from per-query values; cell means are summed in
    /// query-id order.
    pub fn from_per_query(
        q_axis: &[usize],
        p_axis: &[usize],
        mode: RetrievalMode,
        metric: Metric,
        per_query: BTreeMap<Cell, BTreeMap<String, f64>>,
    ) -> Result<Self> {
        let cells = per_query
            .into_iter()
            .map(|(cell, pq)| {
                let mean = if pq.is_empty() { 0.0 } else { pq.values().sum::<f64>() / pq.len() as f64 };
                (cell, Evaluation { metric, per_query: pq, mean })
            })
            .collect();
        Ok(Self { q_axis: normalize_axis(q_axis, "k_q")?, p_axis: normalize_axis(p_axis, "k_p")?, mode, metric, cells })
    }

    pub fn value(&self, k_q: usize, k_p: usize) -> Option<f64> {
        self.cells.get(&(k_q, k_p)).map(|e| e.mean)
    }

    /// Highest aggregate cell; ties go to the smallest k_q, then k_p.
    pub fn best(&self) -> Option<(Cell, f64)> {
        let mut best: Option<(Cell, f64)> = None;
        for (&cell, e) in &self.cells {
            if best.is_none_or(|(_, v)| e.mean > v) {
                best = Some((cell, e.mean));
            }
        }
        best
    }

    /// Fails unless every axis cell exists and all cells cover the same queries.
    pub fn check_complete(&self) -> Result<()> {
        let mut queries: Option<BTreeSet<&String>> = None;
        for &kq in &self.q_axis {
            for &kp in &self.p_axis {
                let e = self
                    .cells
                    .get(&(kq, kp))
                    .ok_or_else(|| Error::IncompleteGrid(format!("cell ({kq}, {kp}) missing")))?;
                let qs: BTreeSet<&String> = e.per_query.keys().collect();
                match &queries {
                    None => queries = Some(qs),
                    Some(first) if *first != qs => {
                        return Err(Error::IncompleteGrid(format!("cell ({kq}, {kp}) covers different queries")));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// `k_q,k_p,mode,metric,value` per cell.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k_q,k_p,mode,metric,value")?;
        for (&(kq, kp), e) in &self.cells {
            writeln!(w, "{kq},{kp},{},{},{:.6}", self.mode, self.metric, e.mean)?;
        }
        Ok(())
    }

    /// `k_q,k_p,mode,metric,value,query_id` per cell and query. Values are
    /// written at full precision so the grid can be read back exactly.
    pub fn write_per_query_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{PER_QUERY_HEADER}")?;
        for (&(kq, kp), e) in &self.cells {
            for (q, v) in &e.per_query {
                writeln!(w, "{kq},{kp},{},{},{v},{q}", self.mode, self.metric)?;
            }
        }
        Ok(())
    }

    /// Reads the output of [`BudgetGrid::write_per_query_csv`]. The axes are
    /// the budgets that occur in the file.
    pub fn read_per_query_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut per_query: BTreeMap<Cell, BTreeMap<String, f64>> = BTreeMap::new();
        let mut kind: Option<(RetrievalMode, Metric)> = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let n = i + 1;
            if i == 0 {
                if line.trim() != PER_QUERY_HEADER {
                    return Err(Error::Parse { line: n, msg: format!("expected header {PER_QUERY_HEADER:?}") });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse { line: n, msg };
            let f: Vec<&str> = line.splitn(6, ',').collect();
            if f.len() != 6 {
                return Err(bad("expected 6 fields".into()));
            }
            let kq: usize = f[0].parse().map_err(|_| bad(format!("bad k_q {:?}", f[0])))?;
            let kp: usize = f[1].parse().map_err(|_| bad(format!("bad k_p {:?}", f[1])))?;
            let mode: RetrievalMode = f[2].parse().map_err(|e: Error| bad(e.to_string()))?;
            let metric: Metric = f[3].parse().map_err(|e: Error| bad(e.to_string()))?;
            let v: f64 = f[4].parse().map_err(|_| bad(format!("bad value {:?}", f[4])))?;
            match kind {
                None => kind = Some((mode, metric)),
                Some(k) if k != (mode, metric) => return Err(bad("mixed modes or metrics".into())),
                _ => {}
            }
            if per_query.entry((kq, kp)).or_default().insert(f[5].to_string(), v).is_some() {
                return Err(bad(format!("duplicate query {} in cell ({kq}, {kp})", f[5])));
            }
        }
        let (mode, metric) = kind.ok_or_else(|| Error::IncompleteGrid("no cells".into()))?;
        let q_axis: Vec<usize> = per_query.keys().map(|c| c.0).collect();
        let p_axis: Vec<usize> = per_query.keys().map(|c| c.1).collect();
        Self::from_per_query(&q_axis, &p_axis, mode, metric, per_query)
    }
}

/// Which budget may vary per query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OracleMode {
    KqOnly,
    KpOnly,
    Joint,
}

impl OracleMode {
    pub const ALL: [OracleMode; 3] = [OracleMode::KqOnly, OracleMode::KpOnly, OracleMode::Joint];
}

impl fmt::Display for OracleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleMode::KqOnly => "kq_only",
            OracleMode::KpOnly => "kp_only",
            OracleMode::Joint => "joint",
        })
    }
}

impl FromStr for OracleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kq_only" => Ok(OracleMode::KqOnly),
            "kp_only" => Ok(OracleMode::KpOnly),
            "joint" => Ok(OracleMode::Joint),
            _ => Err(Error::InvalidArgument(format!("unknown oracle mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub mode: OracleMode,
    /// The grid's best fixed cell, which the single-axis oracles hold on
    /// their fixed axis.
    pub fixed: Cell,
    pub fixed_aggregate: f64,
    /// Per query: the chosen budgets and their metric value.
    pub per_query_best: BTreeMap<String, (usize, usize, f64)>,
    /// Mean of the per-query maxima, in query-id order.
    pub aggregate: f64,
}

impl OracleResult {
    /// `k_q,k_p,mode,metric,value,query_id` per query.
    pub fn write_csv<W: Write>(&self, mut w: W, metric: Metric) -> Result<()> {
        writeln!(w, "k_q,k_p,mode,metric,value,query_id")?;
        for (q, (kq, kp, v)) in &self.per_query_best {
            writeln!(w, "{kq},{kp},{},{metric},{v:.6},{q}", self.mode)?;
        }
        Ok(())
    }
}

/// Picks the best budget per query, with labels in hand. Ties go to the
/// smallest k_q, then the smallest k_p.
pub fn oracle(grid: &BudgetGrid, mode: OracleMode) -> Result<OracleResult> {
    grid.check_complete()?;
    let (fixed, fixed_aggregate) = grid.best().ok_or_else(|| Error::IncompleteGrid("empty grid".into()))?;
    let candidates: Vec<Cell> = match mode {
        OracleMode::KqOnly => grid.q_axis.iter().map(|&kq| (kq, fixed.1)).collect(),
        OracleMode::KpOnly => grid.p_axis.iter().map(|&kp| (fixed.0, kp)).collect(),
        OracleMode::Joint => grid.q_axis.iter().flat_map(|&kq| grid.p_axis.iter().map(move |&kp| (kq, kp))).collect(),
    };
    let mut per_query_best = BTreeMap::new();
    for q in grid.cells[&fixed].per_query.keys() {
        let mut best: Option<(usize, usize, f64)> = None;
        for &(kq, kp) in &candidates {
            let v = grid.cells[&(kq, kp)].per_query[q];
            if best.is_none_or(|b| v > b.2) {
                best = Some((kq, kp, v));
            }
        }
        per_query_best.insert(q.clone(), best.unwrap());
    }
    let n = per_query_best.len();
    let aggregate = if n == 0 { 0.0 } else { per_query_best.values().map(|b| b.2).sum::<f64>() / n as f64 };
    Ok(OracleResult { mode, fixed, fixed_aggregate, per_query_best, aggregate })
}
