//! Acceptance suite. Runs every criterion in order, prints one line each and
//! exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use multirep::bench::{bench_encoding, bench_storage, parallel_label, sequential_label, BenchConfig};
use multirep::encoder::{encode_multistep, encode_parallel, DenoiseSchedule, EncoderConfig, EncoderParams};
use multirep::evalkit::*;
use multirep::index::{build_dense, compress, compression_report, default_centroid_count, DEFAULT_N_PROBE};
use multirep::model::{PromptSettings, TextEncoder};
use multirep::prompt::{PromptTemplate, Target, TokenizedPrompt};
use multirep::repr::RepresentationSet;
use multirep::retrieval::Retriever;
use multirep::scoring::*;
use multirep::synthetic::{evaluate_modes, generate, SyntheticConfig, SyntheticTask};
use multirep::tokenizer::Vocabulary;
use multirep::training::{train, Objective, TrainConfig, DEFAULT_TAU};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn refs(docs: &[(String, RepresentationSet)]) -> impl Iterator<Item = (&String, &RepresentationSet)> {
    docs.iter().map(|(id, r)| (id, r))
}

fn maxsim_oracle_equivalence() -> Outcome {
    let mut r = rng(101);
    let pairs: Vec<_> = (0..1000)
        .map(|_| {
            let h = r.random_range(1..=64);
            let (kq, kp) = (r.random_range(1..=16), r.random_range(1..=16));
            (random_set(&mut r, kq, h), random_set(&mut r, kp, h))
        })
        .collect();
    let t = Instant::now();
    let got: Vec<f64> = pairs.iter().map(|(q, p)| dense_maxsim(q, p).unwrap()).collect();
    let secs = t.elapsed().as_secs_f64();
    let mut worst = 0.0f64;
    for ((q, p), g) in pairs.iter().zip(&got) {
        worst = worst.max((g - maxsim_oracle(q, p)).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    ensure(secs < 5.0, || format!("took {secs:.2}s"))?;
    Ok(format!("max deviation {worst:e} over 1000 pairs in {secs:.3}s"))
}

fn single_row_reduction() -> Outcome {
    let mut r = rng(102);
    for i in 0..100 {
        let h = r.random_range(1..=64);
        let (q, p) = (random_set(&mut r, 1, h), random_set(&mut r, 1, h));
        let mut ip = 0.0f64;
        for d in 0..h {
            ip += q.hidden()[d] as f64 * p.hidden()[d] as f64;
        }
        let (m, mp) = (dense_maxsim(&q, &p).unwrap(), dense_meanpool(&q, &p).unwrap());
        ensure(m == ip && mp == ip, || format!("pair {i}: maxsim {m}, meanpool {mp}, dot {ip}"))?;
    }
    Ok("100 pairs bit-identical".into())
}

fn sparse_pipeline() -> Outcome {
    ensure(log_relu(0.0) == 0.0, || "log(1+relu(0)) != 0".into())?;
    ensure(log_relu(std::f64::consts::E - 1.0) == 1.0, || "log(1+relu(e-1)) != 1".into())?;
    ensure(log_relu(-3.0) == 0.0, || "negative logit not clipped".into())?;
    let mut r = rng(103);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let v = r.random_range(2..80);
        let filter = ContentWordFilter::from_ids(v, (0..v as u32).filter(|_| r.random_bool(0.7)));
        let h = 4;
        let (kq, kp) = (r.random_range(1..6), r.random_range(1..6));
        let q = random_set_with_logits(&mut r, kq, h, v);
        let p = random_set_with_logits(&mut r, kp, h, v);
        let densify = |s: &RepresentationSet| -> Vec<f64> {
            let logits = match s.logits().unwrap() {
                multirep::repr::Logits::Dense(l) => l.clone(),
                _ => unreachable!(),
            };
            (0..v)
                .map(|id| {
                    if !filter.allows(id as u32) {
                        return 0.0;
                    }
                    let best = logits.chunks_exact(v).map(|row| row[id] as f64).fold(f64::NEG_INFINITY, f64::max);
                    best.max(0.0).ln_1p() as f32 as f64
                })
                .collect()
        };
        let (sq, sp) = (sparse_project(&q, &filter).unwrap(), sparse_project(&p, &filter).unwrap());
        let (dq, dp) = (densify(&q), densify(&p));
        for id in 0..v {
            worst = worst.max((sq.get(id as u32) as f64 - dq[id]).abs());
        }
        let want: f64 = dq.iter().zip(&dp).map(|(a, b)| a * b).sum();
        let got = sparse_score(&sq, &sp).unwrap();
        worst = worst.max((got - want).abs());
        ensure(worst <= 1e-9, || format!("instance {i}: deviation {worst:e}"))?;
    }
    Ok(format!("hand cases exact; max deviation {worst:e} over 1000 instances"))
}

fn list(q: &str, items: &[(&str, f64)]) -> ScoredList {
    ScoredList::new(q, items.iter().map(|(d, s)| (d.to_string(), *s)).collect(), 1000)
}

fn ranking(l: &ScoredList) -> Vec<String> {
    l.doc_ids().map(str::to_string).collect()
}

fn hybrid_fusion() -> Outcome {
    let h = hybrid_fuse(&list("q", &[("A", 4.0), ("B", 2.0)]), &list("q", &[("A", 10.0), ("B", 30.0)])).unwrap();
    ensure(h.items() == [("A".to_string(), 0.5), ("B".to_string(), 0.5)], || format!("two-doc case: {:?}", h.items()))?;
    let h = hybrid_fuse(&list("q", &[("A", 5.0), ("B", 1.0)]), &list("q", &[("B", 2.0), ("C", 1.0)])).unwrap();
    let got: BTreeMap<_, _> = h.items().iter().cloned().collect();
    ensure(got["A"] == 0.5, || format!("dense-only doc: {}", got["A"]))?;
    let h = hybrid_fuse(&list("q", &[("A", 7.0), ("B", 7.0), ("C", 7.0)]), &list("q", &[("A", 1.0), ("B", 3.0), ("C", 2.0)])).unwrap();
    let want = [("B".to_string(), 0.75), ("C".to_string(), 0.5), ("A".to_string(), 0.25)];
    ensure(h.items() == want, || format!("degenerate case: {:?}", h.items()))?;

    let mut r = rng(104);
    for i in 0..200 {
        let pick = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<(String, f64)> {
            let mut out = Vec::new();
            for d in 0..30 {
                if r.random_bool(0.6) {
                    out.push((format!("d{d:02}"), r.random_range(-5.0..5.0)));
                }
            }
            out
        };
        let (d, s) = (pick(&mut r), pick(&mut r));
        let (a, b) = (r.random_range(0.01..100.0), r.random_range(-50.0..50.0));
        let scaled = |xs: &[(String, f64)]| xs.iter().map(|(id, x)| (id.clone(), a * x + b)).collect::<Vec<_>>();
        let base = hybrid_fuse(&ScoredList::new("q", d.clone(), 1000), &ScoredList::new("q", s.clone(), 1000)).unwrap();
        let dense_scaled = hybrid_fuse(&ScoredList::new("q", scaled(&d), 1000), &ScoredList::new("q", s.clone(), 1000)).unwrap();
        let sparse_scaled = hybrid_fuse(&ScoredList::new("q", d, 1000), &ScoredList::new("q", scaled(&s), 1000)).unwrap();
        ensure(ranking(&base) == ranking(&dense_scaled) && ranking(&base) == ranking(&sparse_scaled), || {
            format!("list {i}: ranking changed under x -> {a}x + {b}")
        })?;
    }
    Ok("hand cases exact; 200 rescaled lists keep their ranking".into())
}

fn gradient_check_criterion() -> Outcome {
    let t = Instant::now();
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    for seed in 0..10 {
        let r = gradient_check(seed, DEFAULT_TAU, Objective::Combined);
        worst = worst.max(r.max_rel_err);
        checked += r.checked;
        skipped += r.skipped;
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(worst < 1e-4, || format!("relative error {worst:e}"))?;
    ensure(checked > 10 * skipped, || format!("{skipped} of {} parameters skipped", checked + skipped))?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "max relative error {worst:.2e}; {checked} components checked, {skipped} at a kink skipped; 10 seeds in {secs:.1}s"
    ))
}

/// Encoder and optimiser settings for the end-to-end run.
const E2E_HIDDEN: usize = 64;
const E2E_LAYERS: usize = 2;
const E2E_LR: f64 = 5e-4;
const E2E_EPOCHS: usize = 5;
const E2E_BUDGET: usize = 4;

struct Trained {
    task: SyntheticTask,
    model: TextEncoder,
    filter: ContentWordFilter,
}

fn check_task_shape(task: &SyntheticTask) -> Result<(), String> {
    ensure(task.passages.len() == 500 && task.queries.len() == 200, || {
        format!("{} passages, {} queries", task.passages.len(), task.queries.len())
    })?;
    let bags: Vec<std::collections::BTreeSet<&str>> =
        task.passages.iter().map(|(_, t)| t.split_whitespace().collect()).collect();
    for ((qid, text), keys) in task.queries.iter().zip(&task.query_keywords) {
        let rel = task.judgments.for_query(qid).map_or(0, |m| m.values().filter(|&&g| g > 0).count());
        ensure(rel == 1, || format!("{qid} has {rel} relevant passages"))?;
        let words: Vec<&str> = text.split_whitespace().collect();
        ensure(keys.iter().all(|k| words.contains(&k.as_str())) && words.len() > keys.len(), || {
            format!("{qid} is not a noisy keyword subset")
        })?;
        let holders = bags.iter().filter(|b| keys.iter().all(|k| b.contains(k.as_str()))).count();
        ensure(holders == 1, || format!("{qid}: keywords contained in {holders} passages"))?;
    }
    Ok(())
}

fn synthetic_end_to_end() -> (Outcome, Option<Trained>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let t = Instant::now();
    let run = || -> Result<(String, Trained), String> {
        let task = generate(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
        check_task_shape(&task)?;
        let vocab = Vocabulary::build_with_required(task.texts(), 8192, PromptTemplate::scaffold_texts());
        let config = EncoderConfig::new(vocab.len(), E2E_HIDDEN, E2E_LAYERS, 0);
        let mut model = TextEncoder::init(vocab, config, PromptSettings::default()).map_err(|e| e.to_string())?;
        let filter = ContentWordFilter::from_vocabulary(&model.vocab, &default_stopwords());
        let scores = |m: &TextEncoder| {
            evaluate_modes(&Retriever::new(m, filter.clone()), &task, E2E_BUDGET, E2E_BUDGET, Metric::Mrr10)
                .map_err(|e| e.to_string())
        };
        let before = scores(&model)?;
        let cfg = TrainConfig {
            epochs: E2E_EPOCHS,
            learning_rate: E2E_LR,
            k_q: E2E_BUDGET,
            k_p: E2E_BUDGET,
            ..Default::default()
        };
        train(&mut model, &task.train, &cfg, &filter).map_err(|e| e.to_string())?;
        let after = scores(&model)?;
        let detail = format!(
            "MRR@10 dense {:.4} -> {:.4}, sparse {:.4} -> {:.4}, hybrid {:.4} -> {:.4}",
            before.dense, after.dense, before.sparse, after.sparse, before.hybrid, after.hybrid
        );
        ensure(after.dense >= before.dense + 0.2, || format!("dense gain too small; {detail}"))?;
        ensure(after.hybrid >= after.dense.max(after.sparse) - 0.02, || format!("hybrid below best mode; {detail}"))?;
        Ok((detail, Trained { task, model, filter }))
    };
    match pool.install(run) {
        Ok((detail, trained)) => {
            let secs = t.elapsed().as_secs_f64();
            if secs >= 600.0 {
                return (Err(format!("took {secs:.0}s; {detail}")), Some(trained));
            }
            (Ok(format!("{detail} in {secs:.0}s")), Some(trained))
        }
        Err(e) => (Err(e), None),
    }
}

/// Exhaustive hybrid ranking of every passage, without any index.
fn brute_force_hybrid(
    qid: &str,
    q: &RepresentationSet,
    passages: &[(String, RepresentationSet, Vec<f64>)],
    filter: &ContentWordFilter,
    cutoff: usize,
) -> ScoredList {
    let qs = sparse_project(q, filter).unwrap();
    let mut dense = Vec::new();
    let mut sparse = Vec::new();
    for (pid, p, weights) in passages {
        dense.push((pid.clone(), maxsim_oracle(q, p)));
        let s: f64 = qs.entries().iter().map(|&(id, w)| w as f64 * weights[id as usize]).sum();
        if s > 0.0 {
            sparse.push((pid.clone(), s));
        }
    }
    hybrid_fuse(&ScoredList::new(qid, dense, cutoff), &ScoredList::new(qid, sparse, cutoff)).unwrap()
}

fn budget_sweep(trained: Option<&Trained>) -> Outcome {
    let Trained { task, model, filter } = trained.ok_or("needs the trained model from the end-to-end run")?;
    let retriever = Retriever::new(model, filter.clone());
    let axis = DEFAULT_AXIS;
    let corpus = retriever.corpus(&task.passages, &axis).map_err(|e| e.to_string())?;
    let grid = retriever
        .sweep(&corpus, &task.queries, &task.judgments, &axis, &axis, RetrievalMode::Hybrid, Metric::Mrr10)
        .map_err(|e| e.to_string())?;
    let (best_cell, best) = grid.best().ok_or("empty grid")?;
    let base = grid.value(1, 1).ok_or("no (1,1) cell")?;
    ensure(best >= base, || format!("best {best} below (1,1) {base}"))?;

    for &kp in &axis {
        let passages: Vec<(String, RepresentationSet, Vec<f64>)> = model
            .encode_all(&task.passages, Target::Passage, kp)
            .unwrap()
            .into_iter()
            .map(|(id, p)| {
                let sv = sparse_project(&p, filter).unwrap();
                let weights = (0..filter.vocab_size() as u32).map(|i| sv.get(i) as f64).collect();
                (id, p, weights)
            })
            .collect();
        for &kq in &axis {
            let queries = model.encode_all(&task.queries, Target::Query, kq).unwrap();
            let lists: Vec<ScoredList> =
                queries.iter().map(|(id, q)| brute_force_hybrid(id, q, &passages, filter, retriever.cutoff)).collect();
            let want = evaluate(&lists, &task.judgments, Metric::Mrr10);
            ensure(grid.cells[&(kq, kp)] == want, || format!("cell ({kq},{kp}) differs from brute force"))?;
        }
    }

    let mut all: Vec<((usize, usize), f64)> = grid.cells.iter().map(|(c, e)| (*c, e.mean)).collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ensure(all[0] == (best_cell, best), || format!("argmax {:?} vs enumerated {:?}", (best_cell, best), all[0]))?;
    let mut aggregates = BTreeMap::new();
    for mode in OracleMode::ALL {
        let o = oracle(&grid, mode).map_err(|e| e.to_string())?;
        for (q, &chosen) in &o.per_query_best {
            let mut cands: Vec<(usize, usize, f64)> = grid
                .cells
                .iter()
                .filter(|((cq, cp), _)| match mode {
                    OracleMode::KqOnly => *cp == best_cell.1,
                    OracleMode::KpOnly => *cq == best_cell.0,
                    OracleMode::Joint => true,
                })
                .map(|(&(cq, cp), e)| (cq, cp, e.per_query[q]))
                .collect();
            cands.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
            ensure(chosen == cands[0], || format!("{mode} oracle for {q}: {chosen:?} vs {:?}", cands[0]))?;
        }
        let mean = o.per_query_best.values().map(|b| b.2).sum::<f64>() / o.per_query_best.len() as f64;
        ensure(o.aggregate == mean, || format!("{mode} aggregate {} vs {mean}", o.aggregate))?;
        aggregates.insert(mode.to_string(), o.aggregate);
    }
    let (kq, kp, joint) = (aggregates["kq_only"], aggregates["kp_only"], aggregates["joint"]);
    ensure(joint >= kq.max(kp) && kq.min(kp) >= best, || format!("dominance chain broken: {aggregates:?}"))?;
    Ok(format!(
        "(1,1) {base:.4}, best {best_cell:?} {best:.4}; oracles kq {kq:.4}, kp {kp:.4}, joint {joint:.4}; 25 cells match brute force"
    ))
}

fn multistep_equivalence() -> Outcome {
    let mut r = rng(108);
    let params = EncoderParams::init(EncoderConfig::new(300, 32, 2, 3)).unwrap();
    for k in [1, 2, 4, 8] {
        let prefix: Vec<u32> = (0..20).map(|_| r.random_range(5..300)).collect();
        let prompt = TokenizedPrompt::from_prefix(&prefix, k).unwrap();
        let one = encode_multistep(&params, &prompt, &DenoiseSchedule::balanced(k, 1).unwrap()).unwrap();
        let par = encode_parallel(&params, &prompt).unwrap();
        ensure(one.hidden() == par.hidden() && one.logits() == par.logits(), || format!("k={k}: one step differs"))?;
    }
    let s = DenoiseSchedule::balanced(4, 2).unwrap();
    ensure(s.per_step_unmask() == [2, 2], || format!("K=4, S=2 unmasks {:?}", s.per_step_unmask()))?;
    Ok("one step bit-identical for k in 1,2,4,8; K=4, S=2 unmasks [2, 2]".into())
}

fn ranked(q: &str, docs: &[&str]) -> ScoredList {
    let n = docs.len();
    ScoredList::new(q, docs.iter().enumerate().map(|(i, d)| (d.to_string(), (n - i) as f64)).collect(), 1000)
}

fn metrics() -> Outcome {
    let mut j = Judgments::new();
    j.insert("a", "r", 1);
    j.insert("b", "r", 1);
    j.insert("c", "r", 1);
    let docs11: Vec<String> = (0..10).map(|i| format!("x{i}")).chain(["r".to_string()]).collect();
    let docs11: Vec<&str> = docs11.iter().map(String::as_str).collect();
    let cases = [
        ("mrr rank 3", mrr_at_10(&ranked("a", &["x", "y", "r"]), &j), 1.0 / 3.0),
        ("mrr rank 11", mrr_at_10(&ranked("a", &docs11), &j), 0.0),
        (
            "mrr all first",
            evaluate(&[ranked("a", &["r"]), ranked("b", &["r", "x"]), ranked("c", &["r"])], &j, Metric::Mrr10).mean,
            1.0,
        ),
        ("ndcg rank 2", ndcg_at_10(&ranked("a", &["x", "r"]), &j), 1.0 / 3f64.log2()),
        ("ndcg perfect", ndcg_at_10(&ranked("a", &["r", "x"]), &j), 1.0),
    ];
    for (name, got, want) in cases {
        ensure((got - want).abs() < 1e-6, || format!("{name}: {got} vs {want}"))?;
    }
    let rank2 = cases[3].1;
    ensure((rank2 - 0.6309).abs() < 5e-5, || format!("ndcg rank 2 is {rank2}"))?;

    let mut r = rng(109);
    for i in 0..100 {
        let mut judg = Judgments::new();
        let mut grades = Vec::new();
        let mut items = Vec::new();
        for d in 0..20 {
            let g = if d < 7 { r.random_range(0..4) } else { 0 };
            judg.insert("q", format!("d{d:02}"), g);
            grades.push(g);
            items.push((format!("d{d:02}"), r.random::<f64>()));
        }
        let l = ScoredList::new("q", items, 20);
        let dcg: f64 =
            l.doc_ids().take(10).enumerate().map(|(k, d)| judg.grade("q", d) as f64 / ((k + 2) as f64).log2()).sum();
        let ideal = ideal_dcg_bruteforce(&grades);
        let want = if ideal == 0.0 { 0.0 } else { dcg / ideal };
        let got = ndcg_at_10(&l, &judg);
        ensure((got - want).abs() < 1e-12, || format!("instance {i}: {got} vs {want}"))?;
    }
    Ok("hand cases within 1e-6 of closed forms; 100 graded instances match the permutation oracle".into())
}

fn compression() -> Outcome {
    let mut r = rng(110);
    let docs = mixture_docs(&mut r, 1250, 8, 128, 64, 0.3);
    let dense = build_dense(refs(&docs)).unwrap();
    let c = default_centroid_count(dense.total_rows());
    let comp = compress(&dense, c, 0).unwrap();
    let ratio = compression_report(&dense, &comp).ratio();
    ensure(ratio >= 5.0, || format!("storage ratio {ratio:.2}"))?;
    let decoded = comp.decode();
    let mut overlap = 0.0;
    for i in 0..100 {
        let target = r.random_range(0..docs.len());
        let q = noisy_query(&mut r, &docs[target].1, 4, 0.3);
        ensure(comp.search("q", &q, c, 10).unwrap() == decoded.search("q", &q, 10).unwrap(), || {
            format!("query {i}: full probe differs from decoded flat search")
        })?;
        let approx = comp.search("q", &q, DEFAULT_N_PROBE, 10).unwrap();
        let flat = dense.search("q", &q, 10).unwrap();
        overlap += overlap_at_10(approx.doc_ids(), flat.doc_ids());
    }
    overlap /= 100.0;
    ensure(overlap >= 0.8, || format!("overlap@10 {overlap:.3} at n_probe {DEFAULT_N_PROBE}"))?;
    Ok(format!(
        "{} rows, {c} centroids: ratio {ratio:.2}x, overlap@10 {overlap:.3} at n_probe {DEFAULT_N_PROBE}",
        dense.total_rows()
    ))
}

fn latency_and_storage() -> Outcome {
    let cfg = BenchConfig {
        warmup_runs: 2,
        timed_runs: 5,
        input_lengths: vec![32, 64, 128],
        k_values: vec![8],
        index_sizes: vec![250, 500, 1000],
        ..Default::default()
    };
    let params = EncoderParams::init(EncoderConfig::new(8192, cfg.hidden_dim, 2, 0)).unwrap();
    let report = bench_encoding(&params, &cfg).map_err(|e| e.to_string())?;
    let mut ratios = Vec::new();
    for &len in &cfg.input_lengths {
        let par = report.get(len, &parallel_label(8)).ok_or("missing parallel row")?.mean_ms;
        let seq = report.get(len, &sequential_label(8)).ok_or("missing sequential row")?.mean_ms;
        ratios.push(seq / par);
    }
    let worst = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    ensure(worst >= 2.0, || format!("sequential/parallel ratios {ratios:.2?}"))?;

    let storage = bench_storage(&BenchConfig { k_values: vec![1, 2, 4, 8], ..cfg.clone() }).map_err(|e| e.to_string())?;
    for row in &storage.rows {
        let want = (row.docs * row.k_p * cfg.hidden_dim * 4) as u64;
        ensure(row.vector_bytes == want, || format!("{} docs at k_p {}: {} vector bytes", row.docs, row.k_p, row.vector_bytes))?;
    }
    for &n in &cfg.index_sizes {
        let base = storage.get(n, 1).unwrap();
        for k in [2, 4, 8] {
            let row = storage.get(n, k).unwrap();
            ensure(row.total_bytes - base.total_bytes == row.vector_bytes - base.vector_bytes, || {
                format!("{n} docs: non-vector bytes depend on k_p")
            })?;
        }
    }
    Ok(format!("sequential(cap 8) / parallel(k=8) ratios {ratios:.2?}; storage exact at every size and budget"))
}

fn correlations() -> Outcome {
    let mut r = rng(112);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let xs = tied_sample(&mut r, 50, 6);
        let ys = tied_sample(&mut r, 50, 4);
        let (rho, tau) = rank_correlation(&xs, &ys).map_err(|e| e.to_string())?;
        worst = worst.max((rho - spearman_pairs_oracle(&xs, &ys)).abs());
        worst = worst.max((tau - kendall_pairs_oracle(&xs, &ys)).abs());
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
    let up: Vec<f64> = xs.iter().map(|x| x * x + 1.0).collect();
    let down: Vec<f64> = xs.iter().map(|x| -x.exp()).collect();
    ensure(rank_correlation(&xs, &up).unwrap() == (1.0, 1.0), || "increasing input not +1".into())?;
    ensure(rank_correlation(&xs, &down).unwrap() == (-1.0, -1.0), || "decreasing input not -1".into())?;
    Ok(format!("max deviation {worst:e} on 100 tied samples; monotone inputs give exactly ±1"))
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n, name, o: Outcome| {
        let (tag, detail) = match &o {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => ("FAIL", d.as_str()),
        };
        println!("criterion {n:>2} {tag}  {name}: {detail}");
        results.push((n, name, o));
    };
    record(1, "MaxSim matches double loop", maxsim_oracle_equivalence());
    record(2, "single-row reduction", single_row_reduction());
    record(3, "sparse pipeline", sparse_pipeline());
    record(4, "hybrid fusion", hybrid_fusion());
    record(5, "gradient check", gradient_check_criterion());
    let (e2e, trained) = synthetic_end_to_end();
    record(6, "synthetic end-to-end", e2e);
    record(7, "budget sweep and oracles", budget_sweep(trained.as_ref()));
    record(8, "multistep equivalence", multistep_equivalence());
    record(9, "metrics", metrics());
    record(10, "compression", compression());
    record(11, "latency and storage", latency_and_storage());
    record(12, "rank correlations", correlations());
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
