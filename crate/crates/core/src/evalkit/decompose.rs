//! Single-vector vs mean-pooled vs MaxSim dense scoring under one setup.

use std::io::Write;

use rayon::prelude::*;

use super::{evaluate, Evaluation, Judgments, Metric};
use crate::error::Result;
use crate::repr::Item;
use crate::retrieval::{Corpus, Retriever};

/// Aggregates of the three dense variants.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub k_q: usize,
    pub k_p: usize,
    /// One query row against the k_p = 1 index.
    pub single: Evaluation,
    /// Mean of the k_q query rows against the mean of each passage's k_p rows.
    pub meanpool: Evaluation,
    pub maxsim: Evaluation,
}

impl Decomposition {
    /// `variant,k_q,k_p,metric,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "variant,k_q,k_p,metric,value")?;
        for (name, kq, kp, e) in [
            ("single", 1, 1, &self.single),
            ("meanpool", self.k_q, self.k_p, &self.meanpool),
            ("maxsim", self.k_q, self.k_p, &self.maxsim),
        ] {
            writeln!(w, "{name},{kq},{kp},{},{:.6}", e.metric, e.mean)?;
        }
        Ok(())
    }
}

/// Needs indexes at k_p = 1 and at `k_p`.
pub fn decompose_scoring(
    retriever: &Retriever,
    corpus: &Corpus,
    queries: &[(String, String)],
    judgments: &Judgments,
    k_q: usize,
    k_p: usize,
    metric: Metric,
) -> Result<Decomposition> {
    let single_index = &corpus.get(1)?.dense;
    let multi_index = &corpus.get(k_p)?.dense;
    let cutoff = retriever.cutoff;
    let run = |qs: &[Item], pooled: bool| -> Result<_> {
        qs.par_iter()
            .map(|(id, q)| {
                if pooled {
                    multi_index.search_meanpool(id, q, cutoff)
                } else {
                    multi_index.search(id, q, cutoff)
                }
            })
            .collect::<Result<Vec<_>>>()
    };
    let single_q = retriever.encode_queries(queries, 1)?;
    let multi_q = retriever.encode_queries(queries, k_q)?;
    let single = single_index.search_batch(&single_q, cutoff)?;
    Ok(Decomposition {
        k_q,
        k_p,
        single: evaluate(&single, judgments, metric),
        meanpool: evaluate(&run(&multi_q, true)?, judgments, metric),
        maxsim: evaluate(&run(&multi_q, false)?, judgments, metric),
    })
}
