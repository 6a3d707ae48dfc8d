use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use multirep::bench::{bench_encoding, bench_search, bench_storage, BenchConfig, IndexFamily};
use multirep::data::load_texts;
use multirep::encoder::{encode_multistep, encode_sequential, EncoderConfig, EncoderParams, DenoiseSchedule};
use multirep::evalkit::{
    bootstrap_correlation, decompose_scoring, evaluate, load_run, oracle, query_features, save_run, BudgetGrid,
    Judgments, Metric, OracleMode, BOOTSTRAP_RESAMPLES,
};
use multirep::index::{compress, compression_report, default_centroid_count, CompressedIndex};
use multirep::model::{PromptSettings, TextEncoder};
use multirep::prompt::{Phrasing, PromptTemplate, Target};
use multirep::repr::{load_drpr, save_drpr, Item};
use multirep::retrieval::{PassageIndex, Retriever};
use multirep::scoring::{default_stopwords, hybrid_fuse, ContentWordFilter, RetrievalMode, ScoredList};
use multirep::synthetic::{generate, SyntheticConfig};
use multirep::tokenizer::Vocabulary;
use multirep::training::{load_train_items, train, TrainConfig};

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::{output, BenchAxis, Cli, Command, EncodeArgs, EvalData, ModeArg, SearchArgs, TargetArg};

impl From<ModeArg> for RetrievalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Dense => RetrievalMode::Dense,
            ModeArg::Sparse => RetrievalMode::Sparse,
            ModeArg::Hybrid => RetrievalMode::Hybrid,
        }
    }
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Query => Target::Query,
            TargetArg::Passage => Target::Passage,
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = Config::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    cfg.apply_sets(&cli.set)?;
    match cli.command {
        Command::Synth { out } => synth(&cfg, &out),
        Command::Init { texts, out } => init(&cfg, &texts, &out),
        Command::Encode(args) => encode(cfg, args),
        Command::Index { model, reps, out } => index(&cfg, &model, &reps, &out),
        Command::Search(args) => search(cfg, args),
        Command::Fuse { dense, sparse, cutoff, out } => {
            cfg.flag("index.cutoff", cutoff)?;
            fuse(&cfg, &dense, &sparse, &out)
        }
        Command::Train { model, train, out } => train_cmd(&cfg, &model, &train, &out),
        Command::Sweep { data, mode, metric, out } => {
            cfg.flag("eval.mode", mode.map(RetrievalMode::from))?;
            cfg.flag("eval.metric", metric)?;
            sweep(&cfg, &data, &out)
        }
        Command::Oracle { grid, queries, out } => oracle_cmd(&cfg, &grid, queries.as_deref(), &out),
        Command::Decompose { data, k_q, k_p, metric, out } => {
            cfg.flag("eval.k_q", k_q)?;
            cfg.flag("eval.k_p", k_p)?;
            cfg.flag("eval.metric", metric)?;
            decompose(&cfg, &data, &out)
        }
        Command::Compress { index, out } => compress_cmd(&cfg, &index, &out),
        Command::Bench { axis, model, out } => bench(&cfg, axis, model.as_deref(), &out),
        Command::Eval { run, qrels, metric, out } => {
            cfg.flag("eval.metric", metric)?;
            eval(&cfg, &run, &qrels, &out)
        }
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn filter_for(model: &TextEncoder) -> ContentWordFilter {
    ContentWordFilter::from_vocabulary(&model.vocab, &default_stopwords())
}

fn load_nonempty_texts(path: &Path) -> CliResult<Vec<(String, String)>> {
    let texts = load_texts(path)?;
    if texts.is_empty() {
        return Err(CliError::Usage(format!("{} contains no records", path.display())));
    }
    Ok(texts)
}

fn synth(cfg: &Config, out: &Path) -> CliResult<()> {
    let sc = SyntheticConfig {
        n_passages: cfg.get("synth.passages")?,
        n_queries: cfg.get("synth.queries")?,
        train_per_passage: cfg.get("synth.train_per_passage")?,
        hard_negatives: cfg.get("synth.hard_negatives")?,
        train_on_eval_targets: cfg.get("synth.train_on_eval_targets")?,
        seed: cfg.get("synth.seed")?,
        ..Default::default()
    };
    let task = generate(&sc)?;
    output::dir(out, |tmp| {
        task.save(tmp)?;
        output::log_config_in_dir(tmp, "synth", cfg)
    })?;
    log::info!(
        "{} passages, {} queries, {} training items in {}",
        task.passages.len(),
        task.queries.len(),
        task.train.len(),
        out.display()
    );
    Ok(())
}

fn prompt_settings(cfg: &Config) -> CliResult<PromptSettings> {
    let phrasing = match cfg.raw("encoder.phrasing") {
        "auto" => None,
        p => Some(p.parse::<Phrasing>()?),
    };
    Ok(PromptSettings { max_len: cfg.get("encoder.max_len")?, phrasing })
}

fn init(cfg: &Config, texts: &[std::path::PathBuf], out: &Path) -> CliResult<()> {
    let mut all = Vec::new();
    for path in texts {
        all.extend(load_texts(path)?.into_iter().map(|(_, t)| t));
    }
    let vocab = Vocabulary::build_with_required(&all, cfg.get("encoder.max_vocab")?, PromptTemplate::scaffold_texts());
    let config = EncoderConfig::new(
        vocab.len(),
        cfg.get("encoder.hidden_dim")?,
        cfg.get("encoder.layers")?,
        cfg.get("encoder.seed")?,
    );
    let model = TextEncoder::init(vocab, config, prompt_settings(cfg)?)?;
    output::dir(out, |tmp| {
        model.save(tmp)?;
        output::log_config_in_dir(tmp, "init", cfg)
    })?;
    log::info!("vocabulary of {} tokens, {} parameters", model.vocab.len(), config.param_count());
    Ok(())
}

fn encode(cfg: Config, args: EncodeArgs) -> CliResult<()> {
    let model = TextEncoder::load(&args.model)?;
    let texts = load_nonempty_texts(&args.input)?;
    let target = Target::from(args.target);
    let items: Vec<Item> = match (args.sequential, args.multistep) {
        (Some(cap), _) => texts
            .iter()
            .map(|(id, t)| Ok((id.clone(), encode_sequential(&model.params, &model.prompt(t, target, args.k)?, cap)?)))
            .collect::<multirep::Result<_>>()?,
        (None, Some(steps)) => {
            let schedule = DenoiseSchedule::balanced(args.k, steps)?;
            texts
                .iter()
                .map(|(id, t)| Ok((id.clone(), encode_multistep(&model.params, &model.prompt(t, target, args.k)?, &schedule)?)))
                .collect::<multirep::Result<_>>()?
        }
        (None, None) => model.encode_all(&texts, target, args.k)?,
    };
    let top_t: usize = cfg.get("encoder.top_t")?;
    let items: Vec<Item> = if top_t > 0 {
        items.into_iter().map(|(id, r)| Ok((id, r.to_top_t(top_t)?))).collect::<multirep::Result<_>>()?
    } else {
        items
    };
    output::file(&args.out, |tmp| {
        save_drpr(tmp, &items)?;
        Ok(())
    })?;
    output::log_config_for_file(&args.out, "encode", &cfg)?;
    log::info!("encoded {} texts at k = {}", items.len(), args.k);
    Ok(())
}

fn index(cfg: &Config, model: &Path, reps: &Path, out: &Path) -> CliResult<()> {
    let model = TextEncoder::load(model)?;
    let (_, items) = load_drpr(reps)?;
    let index = PassageIndex::from_items(&items, &filter_for(&model))?;
    output::dir(out, |tmp| {
        index.save(tmp)?;
        output::log_config_in_dir(tmp, "index", cfg)
    })?;
    log::info!("indexed {} passages", index.dense.len());
    Ok(())
}

fn mode(cfg: &Config) -> CliResult<RetrievalMode> {
    cfg.get("eval.mode")
}

fn metric(cfg: &Config) -> CliResult<Metric> {
    cfg.get("eval.metric")
}

fn search(mut cfg: Config, args: SearchArgs) -> CliResult<()> {
    cfg.flag("eval.mode", args.mode.map(RetrievalMode::from))?;
    cfg.flag("index.cutoff", args.cutoff)?;
    cfg.flag("index.n_probe", args.n_probe)?;
    let model = TextEncoder::load(&args.model)?;
    let (_, queries) = load_drpr(&args.queries)?;
    let cutoff: usize = cfg.get("index.cutoff")?;
    let mode = mode(&cfg)?;
    let lists: Vec<ScoredList> = match (&args.index, &args.compressed) {
        (_, Some(path)) => {
            if mode != RetrievalMode::Dense {
                return Err(CliError::Usage("compressed indexes support dense search only".into()));
            }
            let index = CompressedIndex::load(path)?;
            let n_probe: usize = cfg.get("index.n_probe")?;
            queries.iter().map(|(id, q)| index.search(id, q, n_probe, cutoff)).collect::<multirep::Result<_>>()?
        }
        (Some(dir), None) => {
            let index = PassageIndex::load(dir)?;
            Retriever::new(&model, filter_for(&model)).with_cutoff(cutoff).search(&index, &queries, mode)?
        }
        (None, None) => return Err(CliError::Usage("pass --index or --compressed".into())),
    };
    output::file(&args.out, |tmp| Ok(save_run(tmp, &lists, &mode.to_string())?))?;
    output::log_config_for_file(&args.out, "search", &cfg)?;
    log::info!("{} queries searched in {mode} mode", lists.len());
    Ok(())
}

fn fuse(cfg: &Config, dense: &Path, sparse: &Path, out: &Path) -> CliResult<()> {
    let cutoff: usize = cfg.get("index.cutoff")?;
    let dense = load_run(dense)?;
    let mut sparse: BTreeMap<String, ScoredList> = load_run(sparse)?.into_iter().map(|l| (l.query_id.clone(), l)).collect();
    let mut fused = Vec::with_capacity(dense.len());
    for d in &dense {
        let s = sparse.remove(&d.query_id).unwrap_or_else(|| ScoredList::new(d.query_id.clone(), Vec::new(), 0));
        fused.push(ScoredList::new(d.query_id.clone(), hybrid_fuse(d, &s)?.into_items(), cutoff));
    }
    for (q, s) in sparse {
        let d = ScoredList::new(q.clone(), Vec::new(), 0);
        fused.push(ScoredList::new(q, hybrid_fuse(&d, &s)?.into_items(), cutoff));
    }
    output::file(out, |tmp| Ok(save_run(tmp, &fused, &RetrievalMode::Hybrid.to_string())?))?;
    output::log_config_for_file(out, "fuse", cfg)
}

fn train_cmd(cfg: &Config, model_dir: &Path, train_path: &Path, out: &Path) -> CliResult<()> {
    let mut model = TextEncoder::load(model_dir)?;
    let items = load_train_items(train_path)?;
    let tc = TrainConfig {
        tau: cfg.get("train.tau")?,
        batch_size: cfg.get("train.batch_size")?,
        epochs: cfg.get("train.epochs")?,
        learning_rate: cfg.get("train.learning_rate")?,
        k_q: cfg.get("train.k_q")?,
        k_p: cfg.get("train.k_p")?,
        seed: cfg.get("train.seed")?,
        negatives_per_query: cfg.get("train.negatives")?,
        objective: cfg.get("train.objective")?,
    };
    let filter = filter_for(&model);
    let report = train(&mut model, &items, &tc, &filter)?;
    output::dir(out, |tmp| {
        model.save(tmp)?;
        let mut w = create(&tmp.join("losses.csv"))?;
        writeln!(w, "epoch,dense,sparse,total")?;
        for (i, l) in report.epoch_losses.iter().enumerate() {
            writeln!(w, "{},{:.6},{:.6},{:.6}", i + 1, l.dense, l.sparse, l.total)?;
        }
        w.flush()?;
        output::log_config_in_dir(tmp, "train", cfg)
    })?;
    log::info!("{} steps over {} items", report.steps, items.len());
    Ok(())
}

struct Loaded {
    model: TextEncoder,
    passages: Vec<(String, String)>,
    queries: Vec<(String, String)>,
    judgments: Judgments,
}

fn load_eval_data(data: &EvalData) -> CliResult<Loaded> {
    Ok(Loaded {
        model: TextEncoder::load(&data.model)?,
        passages: load_nonempty_texts(&data.passages)?,
        queries: load_nonempty_texts(&data.queries)?,
        judgments: Judgments::load(&data.qrels)?,
    })
}

fn sweep(cfg: &Config, data: &EvalData, out: &Path) -> CliResult<()> {
    let d = load_eval_data(data)?;
    let q_axis: Vec<usize> = cfg.list("eval.q_axis")?;
    let p_axis: Vec<usize> = cfg.list("eval.p_axis")?;
    let retriever = Retriever::new(&d.model, filter_for(&d.model)).with_cutoff(cfg.get("index.cutoff")?);
    let corpus = retriever.corpus(&d.passages, &p_axis)?;
    let grid = retriever.sweep(&corpus, &d.queries, &d.judgments, &q_axis, &p_axis, mode(cfg)?, metric(cfg)?)?;
    let ((kq, kp), best) = grid.best().ok_or_else(|| CliError::Usage("empty budget grid".into()))?;
    let summary = format!(
        "mode {}, metric {}\nbest cell k_q={kq} k_p={kp}: {best:.6}\n(1,1) cell: {}\n",
        grid.mode,
        grid.metric,
        grid.value(1, 1).map_or("not swept".to_string(), |v| format!("{v:.6}"))
    );
    output::dir(out, |tmp| {
        let mut w = create(&tmp.join("grid.csv"))?;
        grid.write_csv(&mut w)?;
        w.flush()?;
        let mut w = create(&tmp.join("per_query.csv"))?;
        grid.write_per_query_csv(&mut w)?;
        w.flush()?;
        fs::write(tmp.join("summary.txt"), &summary)?;
        output::log_config_in_dir(tmp, "sweep", cfg)
    })?;
    print!("{summary}");
    Ok(())
}

fn oracle_cmd(cfg: &Config, grid_path: &Path, queries: Option<&Path>, out: &Path) -> CliResult<()> {
    let grid = BudgetGrid::read_per_query_csv(BufReader::new(File::open(grid_path)?))?;
    let results = OracleMode::ALL.iter().map(|&m| oracle(&grid, m)).collect::<multirep::Result<Vec<_>>>()?;
    let (kq, kp) = results[0].fixed;
    let mut summary = format!("fixed best cell k_q={kq} k_p={kp}: {:.6}\n", results[0].fixed_aggregate);
    for r in &results {
        summary.push_str(&format!("{} oracle: {:.6} (headroom {:+.6})\n", r.mode, r.aggregate, r.aggregate - r.fixed_aggregate));
    }
    let correlations = match queries {
        Some(path) => Some(headroom_correlations(&grid, &results[2], &load_texts(path)?, cfg)?),
        None => None,
    };
    output::dir(out, |tmp| {
        let mut w = create(&tmp.join("oracle.csv"))?;
        writeln!(w, "oracle,value,fixed_value")?;
        for r in &results {
            writeln!(w, "{},{:.6},{:.6}", r.mode, r.aggregate, r.fixed_aggregate)?;
        }
        w.flush()?;
        for r in &results {
            let mut w = create(&tmp.join(format!("per_query_{}.csv", r.mode)))?;
            r.write_csv(&mut w, grid.metric)?;
            w.flush()?;
        }
        if let Some(rows) = &correlations {
            let mut w = create(&tmp.join("correlation.csv"))?;
            writeln!(w, "feature,statistic,estimate,lower,upper")?;
            for row in rows {
                writeln!(w, "{row}")?;
            }
            w.flush()?;
        }
        fs::write(tmp.join("summary.txt"), &summary)?;
        output::log_config_in_dir(tmp, "oracle", cfg)
    })?;
    print!("{summary}");
    Ok(())
}

/// Rank correlation of query length and token entropy with the joint
/// oracle's per-query gain over the fixed cell, with 95% bootstrap intervals.
fn headroom_correlations(
    grid: &BudgetGrid,
    joint: &multirep::evalkit::OracleResult,
    queries: &[(String, String)],
    cfg: &Config,
) -> CliResult<Vec<String>> {
    let fixed = &grid.cells[&joint.fixed].per_query;
    let texts: BTreeMap<&str, &str> = queries.iter().map(|(id, t)| (id.as_str(), t.as_str())).collect();
    let (mut length, mut entropy, mut gain) = (Vec::new(), Vec::new(), Vec::new());
    for (q, &(_, _, best)) in &joint.per_query_best {
        let text = texts.get(q.as_str()).ok_or_else(|| CliError::Usage(format!("query {q} missing from the query file")))?;
        let f = query_features(text);
        length.push(f.length as f64);
        entropy.push(f.entropy_bits);
        gain.push(best - fixed[q]);
    }
    let seed: u64 = cfg.get("train.seed")?;
    let mut rows = Vec::new();
    for (name, xs) in [("length", &length), ("entropy", &entropy)] {
        let (rho, tau) = bootstrap_correlation(xs, &gain, BOOTSTRAP_RESAMPLES, 0.95, seed)?;
        for (stat, iv) in [("spearman", rho), ("kendall", tau)] {
            rows.push(format!("{name},{stat},{:.6},{:.6},{:.6}", iv.estimate, iv.lower, iv.upper));
        }
    }
    Ok(rows)
}

fn decompose(cfg: &Config, data: &EvalData, out: &Path) -> CliResult<()> {
    let d = load_eval_data(data)?;
    let (k_q, k_p): (usize, usize) = (cfg.get("eval.k_q")?, cfg.get("eval.k_p")?);
    let retriever = Retriever::new(&d.model, filter_for(&d.model)).with_cutoff(cfg.get("index.cutoff")?);
    let mut budgets = vec![1, k_p];
    budgets.dedup();
    let corpus = retriever.corpus(&d.passages, &budgets)?;
    let dec = decompose_scoring(&retriever, &corpus, &d.queries, &d.judgments, k_q, k_p, metric(cfg)?)?;
    output::file(out, |tmp| {
        let mut w = create(tmp)?;
        dec.write_csv(&mut w)?;
        Ok(w.flush()?)
    })?;
    output::log_config_for_file(out, "decompose", cfg)?;
    println!(
        "single {:.6}  meanpool {:.6}  maxsim {:.6}",
        dec.single.mean, dec.meanpool.mean, dec.maxsim.mean
    );
    Ok(())
}

fn compress_cmd(cfg: &Config, index_dir: &Path, out: &Path) -> CliResult<()> {
    let index = PassageIndex::load(index_dir)?.dense;
    let requested: usize = cfg.get("index.centroids")?;
    let c = if requested == 0 { default_centroid_count(index.total_rows()) } else { requested };
    let compressed = compress(&index, c, cfg.get("index.seed")?)?;
    output::file(out, |tmp| Ok(compressed.save(tmp)?))?;
    output::log_config_for_file(out, "compress", cfg)?;
    let report = compression_report(&index, &compressed);
    println!(
        "{} centroids; {} -> {} bytes; ratio {:.2}x (float16 flat: {:.2}x)",
        c,
        report.original.total(),
        report.compressed.total(),
        report.ratio(),
        report.fp16_ratio()
    );
    Ok(())
}

fn bench_config(cfg: &Config) -> CliResult<BenchConfig> {
    Ok(BenchConfig {
        warmup_runs: cfg.get("bench.warmup_runs")?,
        timed_runs: cfg.get("bench.timed_runs")?,
        input_lengths: cfg.list("bench.input_lengths")?,
        index_sizes: cfg.list("bench.index_sizes")?,
        k_values: cfg.list("bench.k_values")?,
        search_budgets: cfg.pairs("bench.search_budgets")?,
        hidden_dim: cfg.get("bench.hidden_dim")?,
        seed: cfg.get("bench.seed")?,
    })
}

fn bench(cfg: &Config, axis: BenchAxis, model: Option<&Path>, out: &Path) -> CliResult<()> {
    let bc = bench_config(cfg)?;
    let mut csv = Vec::new();
    match axis {
        BenchAxis::Encoding => {
            let params = match model {
                Some(dir) => TextEncoder::load(dir)?.params,
                None => EncoderParams::init(EncoderConfig::new(
                    cfg.get("bench.vocab_size")?,
                    bc.hidden_dim,
                    cfg.get("bench.layers")?,
                    bc.seed,
                ))?,
            };
            bench_encoding(&params, &bc)?.write_csv(&mut csv)?;
        }
        BenchAxis::Search => {
            let families = [IndexFamily::Flat, IndexFamily::Compressed { n_probe: cfg.get("bench.n_probe")? }];
            bench_search(&bc, &families)?.write_csv(&mut csv)?;
        }
        BenchAxis::Storage => bench_storage(&bc)?.write_csv(&mut csv)?,
    }
    output::file(out, |tmp| Ok(fs::write(tmp, &csv)?))?;
    output::log_config_for_file(out, "bench", cfg)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}

fn eval(cfg: &Config, run: &Path, qrels: &Path, out: &Path) -> CliResult<()> {
    let lists = load_run(run)?;
    let judgments = Judgments::load(qrels)?;
    let e = evaluate(&lists, &judgments, metric(cfg)?);
    output::file(out, |tmp| {
        let mut w = create(tmp)?;
        writeln!(w, "query_id,{}", e.metric)?;
        for (q, v) in &e.per_query {
            writeln!(w, "{q},{v:.6}")?;
        }
        Ok(w.flush()?)
    })?;
    output::log_config_for_file(out, "eval", cfg)?;
    println!("{} {:.6} over {} queries", e.metric, e.mean, e.per_query.len());
    Ok(())
}
