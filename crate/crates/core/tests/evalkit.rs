mod common;

use std::collections::BTreeMap;

use common::*;
use multirep::evalkit::*;
use multirep::scoring::{RetrievalMode, ScoredList};
use rand::Rng;

#[test]
fn rank_correlations_match_pair_counting() {
    let mut r = rng(11);
    for trial in 0..200 {
        let n = 2 + trial % 60;
        let xs = tied_sample(&mut r, n, 6);
        let ys = tied_sample(&mut r, n, 4);
        let (rho, tau) = rank_correlation(&xs, &ys).unwrap();
        let (rho_o, tau_o) = (spearman_pairs_oracle(&xs, &ys), kendall_pairs_oracle(&xs, &ys));
        if rho_o.is_nan() {
            assert!(rho.is_nan() && tau.is_nan());
            continue;
        }
        assert!((rho - rho_o).abs() < 1e-9, "n={n}: {rho} vs {rho_o}");
        assert!((tau - tau_o).abs() < 1e-9, "n={n}: {tau} vs {tau_o}");
    }
}

#[test]
fn ideal_dcg_matches_exhaustive_ordering() {
    let mut r = rng(12);
    for q in 0..30 {
        let mut judg = Judgments::new();
        let mut grades = Vec::new();
        let mut items = Vec::new();
        for d in 0..20 {
            // at most 7 positives keeps the permutation count small
            let g = if d < 7 { r.random_range(0..4) } else { 0 };
            judg.insert("q", format!("d{d:02}"), g);
            grades.push(g);
            items.push((format!("d{d:02}"), r.random::<f64>()));
        }
        let list = ScoredList::new("q", items, 20);
        let dcg: f64 = list
            .doc_ids()
            .take(10)
            .enumerate()
            .map(|(i, d)| judg.grade("q", d) as f64 / ((i + 2) as f64).log2())
            .sum();
        let ideal = ideal_dcg_bruteforce(&grades);
        let expected = if ideal == 0.0 { 0.0 } else { dcg / ideal };
        let got = ndcg_at_10(&list, &judg);
        assert!((got - expected).abs() < 1e-12, "case {q}: {got} vs {expected}");
        assert!((0.0..=1.0).contains(&got));
    }
}

fn random_grid(r: &mut rand_chacha::ChaCha8Rng, axis: &[usize], queries: usize) -> BudgetGrid {
    let mut cells = BTreeMap::new();
    for &kq in axis {
        for &kp in axis {
            // coarse values so that ties are frequent
            let pq = (0..queries).map(|q| (format!("q{q:02}"), r.random_range(0..5) as f64 / 4.0)).collect();
            cells.insert((kq, kp), pq);
        }
    }
    BudgetGrid::from_per_query(axis, axis, RetrievalMode::Hybrid, Metric::Mrr10, cells).unwrap()
}

#[test]
fn oracle_matches_exhaustive_scan() {
    let mut r = rng(13);
    for _ in 0..50 {
        let g = random_grid(&mut r, &DEFAULT_AXIS, 12);
        let fixed = g.best().unwrap();
        // fixed cell: brute-force over all cells with the tie rule
        let mut all: Vec<((usize, usize), f64)> = g.cells.iter().map(|(c, e)| (*c, e.mean)).collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        assert_eq!(fixed, all[0]);

        let mut results = BTreeMap::new();
        for mode in OracleMode::ALL {
            let o = oracle(&g, mode).unwrap();
            for (q, &(kq, kp, v)) in &o.per_query_best {
                let mut cands: Vec<(usize, usize, f64)> = g
                    .cells
                    .iter()
                    .filter(|((cq, cp), _)| match mode {
                        OracleMode::KqOnly => *cp == fixed.0 .1,
                        OracleMode::KpOnly => *cq == fixed.0 .0,
                        OracleMode::Joint => true,
                    })
                    .map(|(&(cq, cp), e)| (cq, cp, e.per_query[q]))
                    .collect();
                cands.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
                assert_eq!((kq, kp, v), cands[0], "{mode} {q}");
            }
            let mean = o.per_query_best.values().map(|b| b.2).sum::<f64>() / o.per_query_best.len() as f64;
            assert_eq!(o.aggregate, mean);
            results.insert(mode.to_string(), o);
        }
        // dominance chain, per query and in aggregate
        let fixed_cell = &g.cells[&fixed.0];
        for (q, v) in &fixed_cell.per_query {
            let joint = results["joint"].per_query_best[q].2;
            for single in ["kq_only", "kp_only"] {
                let s = results[single].per_query_best[q].2;
                assert!(joint >= s && s >= *v);
            }
        }
        assert!(results["joint"].aggregate >= results["kq_only"].aggregate.max(results["kp_only"].aggregate));
        assert!(results["kq_only"].aggregate.min(results["kp_only"].aggregate) >= fixed.1);
    }
}

#[test]
fn one_cell_sweep_is_plain_evaluation() {
    let mut judg = Judgments::new();
    let mut lists = Vec::new();
    let mut r = rng(14);
    for q in 0..20 {
        judg.insert(format!("q{q}"), format!("d{}", q % 7), 1);
        let items = (0..15).map(|d| (format!("d{d}"), r.random::<f64>())).collect();
        lists.push(ScoredList::new(format!("q{q}"), items, 10));
    }
    let plain = evaluate(&lists, &judg, Metric::Ndcg10);
    let g = sweep_budgets(&[4], &[4], RetrievalMode::Dense, Metric::Ndcg10, &judg, |_, _| Ok(lists.clone())).unwrap();
    assert_eq!(g.cells.len(), 1);
    assert_eq!(g.cells[&(4, 4)], plain);
    let again = sweep_budgets(&[4], &[4], RetrievalMode::Dense, Metric::Ndcg10, &judg, |_, _| Ok(lists.clone())).unwrap();
    assert_eq!(g, again);
}

#[test]
fn metrics_ignore_score_magnitudes() {
    let mut r = rng(15);
    let mut judg = Judgments::new();
    for d in 0..5 {
        judg.insert("q", format!("d{d}"), r.random_range(0..3));
    }
    for _ in 0..50 {
        let items: Vec<(String, f64)> = (0..12).map(|d| (format!("d{d}"), r.random::<f64>())).collect();
        let scaled = items.iter().map(|(d, s)| (d.clone(), 3.0 * s.powi(3) + 1.0)).collect();
        let (a, b) = (ScoredList::new("q", items, 10), ScoredList::new("q", scaled, 10));
        for m in [Metric::Mrr10, Metric::Ndcg10] {
            assert_eq!(m.of(&a, &judg), m.of(&b, &judg));
            assert!((0.0..=1.0).contains(&m.of(&a, &judg)));
        }
    }
}
