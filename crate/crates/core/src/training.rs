//! Contrastive fine-tuning with a dense and a sparse InfoNCE term.
//!
//! Each query's candidate pool holds its positive (index 0), its own hard
//! negatives, and every passage of the other batch items. The dense term
//! scores candidates with MaxSim at temperature `tau`; the sparse term uses
//! the sparse inner product without temperature. Gradients follow the MaxSim
//! row picked for each query row (lowest passage row on ties) and the
//! max-pooled mask row of each sparse weight; `relu'(0) = 0`.

use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{forward_masks, ContextMode, EncoderParams, MaskOutputs};
use crate::error::{Error, Result};
use crate::model::TextEncoder;
use crate::prompt::{Target, TokenizedPrompt};
use crate::scoring::{maxsim_with_argmax, ContentWordFilter};

pub const DEFAULT_TAU: f64 = 0.01;

/// One training example as stored in JSONL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainItem {
    pub query: String,
    pub positive: String,
    #[serde(default)]
    pub negatives: Vec<String>,
}

/// Reads one [`TrainItem`] per line; blank lines are skipped.
pub fn load_train_items(path: impl AsRef<Path>) -> Result<Vec<TrainItem>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut items = Vec::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: TrainItem =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: n + 1, msg: e.to_string() })?;
        if item.positive.trim().is_empty() {
            return Err(Error::Parse { line: n + 1, msg: "empty positive passage".into() });
        }
        items.push(item);
    }
    Ok(items)
}

pub fn save_train_items(path: impl AsRef<Path>, items: &[TrainItem]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Which loss terms are optimised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Combined,
    Dense,
    Sparse,
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "combined" => Ok(Objective::Combined),
            "dense" => Ok(Objective::Dense),
            "sparse" => Ok(Objective::Sparse),
            other => Err(Error::InvalidArgument(format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub k_q: usize,
    pub k_p: usize,
    pub seed: u64,
    pub negatives_per_query: usize,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            batch_size: 8,
            epochs: 3,
            learning_rate: 1e-3,
            k_q: 4,
            k_p: 4,
            seed: 0,
            negatives_per_query: 15,
            objective: Objective::Combined,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if self.k_q == 0 || self.k_p == 0 {
            return bad("k_q and k_p must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        Ok(())
    }
}

/// `-log softmax(scores / tau)[positive]`, computed with log-sum-exp.
pub fn loss_dense(scores: &[f64], positive: usize, tau: f64) -> Result<f64> {
    Ok(softmax_ce(scores, positive, tau)?.0)
}

/// [`loss_dense`] with `tau = 1`.
pub fn loss_sparse(scores: &[f64], positive: usize) -> Result<f64> {
    loss_dense(scores, positive, 1.0)
}

/// Loss and softmax probabilities.
fn softmax_ce(scores: &[f64], positive: usize, tau: f64) -> Result<(f64, Vec<f64>)> {
    if positive >= scores.len() {
        return Err(Error::BadIndex { index: positive, pool: scores.len() });
    }
    let max = scores.iter().map(|s| s / tau).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s / tau - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - scores[positive] / tau;
    Ok((loss.max(0.0), exps.into_iter().map(|e| e / sum).collect()))
}

/// A training example already rendered into prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptExample {
    pub query: TokenizedPrompt,
    pub positive: TokenizedPrompt,
    pub negatives: Vec<TokenizedPrompt>,
}

impl PromptExample {
    fn passages(&self) -> impl Iterator<Item = &TokenizedPrompt> {
        std::iter::once(&self.positive).chain(&self.negatives)
    }
}

/// Mean losses over the queries of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BatchLoss {
    pub dense: f64,
    pub sparse: f64,
    /// Sum of the optimised terms.
    pub total: f64,
}

/// Loss, optional gradient, and a fingerprint of every discrete choice made
/// (MaxSim picks, sparse max rows, active ReLUs). Two evaluations with the same
/// pattern lie on the same smooth piece of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEval {
    pub loss: BatchLoss,
    pub grad: Option<Vec<f64>>,
    pub pattern: u64,
}

/// A positive sparse weight and where it came from.
struct SparseEntry {
    id: u32,
    weight: f64,
    row: usize,
    logit: f64,
}

struct Encoded {
    out: MaskOutputs,
    sparse: Vec<SparseEntry>,
}

fn encode_for_training(
    params: &EncoderParams,
    prompt: &TokenizedPrompt,
    filter: &ContentWordFilter,
    pattern: &mut DefaultHasher,
) -> Result<Encoded> {
    let out = forward_masks(params, prompt, ContextMode::Bidirectional)?;
    let v = params.vocab_size();
    let k = prompt.k();
    let mut sparse = Vec::new();
    for id in filter.allowed_ids() {
        let (mut row, mut best) = (0, f64::NEG_INFINITY);
        for r in 0..k {
            let x = out.logits[r * v + id as usize];
            if x > best {
                best = x;
                row = r;
            }
        }
        if best > 0.0 {
            (id, row).hash(pattern);
            sparse.push(SparseEntry { id, weight: best.ln_1p(), row, logit: best });
        }
    }
    Ok(Encoded { out, sparse })
}

fn sparse_dot(a: &[SparseEntry], b: &[SparseEntry]) -> f64 {
    let (mut i, mut j, mut total) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].id.cmp(&b[j].id) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                total += a[i].weight * b[j].weight;
                i += 1;
                j += 1;
            }
        }
    }
    total
}

/// `dst[entry] += g * other_weight` for every id shared by `a` and `b`.
fn sparse_dot_backward(a: &[SparseEntry], b: &[SparseEntry], g: f64, da: &mut [f64], db: &mut [f64]) {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].id.cmp(&b[j].id) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                da[i] += g * b[j].weight;
                db[j] += g * a[i].weight;
                i += 1;
                j += 1;
            }
        }
    }
}

/// Adjoint buffers for one encoded prompt.
struct Adjoint {
    hidden: Vec<f64>,
    sparse: Vec<f64>,
}

impl Adjoint {
    fn new(e: &Encoded) -> Self {
        Self { hidden: vec![0.0; e.out.trace.hidden.len()], sparse: vec![0.0; e.sparse.len()] }
    }
}

fn backward_item(params: &EncoderParams, e: &Encoded, adj: &Adjoint, grad: &mut [f64]) {
    let v = params.vocab_size();
    let d_logits = if adj.sparse.iter().any(|&g| g != 0.0) {
        let mut dl = vec![0.0; e.out.logits.len()];
        for (entry, &g) in e.sparse.iter().zip(&adj.sparse) {
            dl[entry.row * v + entry.id as usize] += g / (1.0 + entry.logit);
        }
        Some(dl)
    } else {
        None
    };
    params.backward(&e.out.trace, &adj.hidden, d_logits.as_deref(), grad);
}

/// Evaluates the batch objective; with `with_grad` also its gradient with
/// respect to every parameter.
pub fn batch_objective(
    params: &EncoderParams,
    batch: &[PromptExample],
    tau: f64,
    objective: Objective,
    filter: &ContentWordFilter,
    with_grad: bool,
) -> Result<BatchEval> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if filter.vocab_size() != params.vocab_size() {
        return Err(Error::DimensionMismatch(format!(
            "filter covers {} ids, model has {}",
            filter.vocab_size(),
            params.vocab_size()
        )));
    }
    let h = params.hidden_dim();
    let mut pattern = DefaultHasher::new();
    let queries = batch
        .iter()
        .map(|ex| encode_for_training(params, &ex.query, filter, &mut pattern))
        .collect::<Result<Vec<_>>>()?;
    let mut passages = Vec::new();
    let mut passage_prompts = Vec::new();
    let mut owner = Vec::new();
    for (i, ex) in batch.iter().enumerate() {
        for p in ex.passages() {
            passages.push(encode_for_training(params, p, filter, &mut pattern)?);
            passage_prompts.push(p);
            owner.push(i);
        }
    }

    let use_dense = objective != Objective::Sparse;
    let use_sparse = objective != Objective::Dense;
    let scale = 1.0 / batch.len() as f64;
    let mut q_adj: Vec<Adjoint> = queries.iter().map(Adjoint::new).collect();
    let mut p_adj: Vec<Adjoint> = passages.iter().map(Adjoint::new).collect();
    let mut loss = BatchLoss::default();

    for (i, q) in queries.iter().enumerate() {
        // Own passages first (positive at index 0), then the other items'
        // passages, skipping exact copies of this query's positive.
        let own_pos = &batch[i].positive.token_ids;
        let pool: Vec<usize> = (0..passages.len())
            .filter(|&c| owner[c] == i)
            .chain((0..passages.len()).filter(|&c| owner[c] != i && &passage_prompts[c].token_ids != own_pos))
            .collect();

        let mut dense_scores = Vec::with_capacity(pool.len());
        let mut picks = Vec::with_capacity(pool.len());
        for &c in &pool {
            let (s, pick) = maxsim_with_argmax(&q.out.trace.hidden, &passages[c].out.trace.hidden, h);
            pick.hash(&mut pattern);
            dense_scores.push(s);
            picks.push(pick);
        }
        let sparse_scores: Vec<f64> = pool.iter().map(|&c| sparse_dot(&q.sparse, &passages[c].sparse)).collect();

        let (ld, pd) = softmax_ce(&dense_scores, 0, tau)?;
        let (ls, ps) = softmax_ce(&sparse_scores, 0, 1.0)?;
        loss.dense += scale * ld;
        loss.sparse += scale * ls;

        if !with_grad {
            continue;
        }
        let kq = q.out.trace.hidden.len() / h;
        for (n, &c) in pool.iter().enumerate() {
            let target = if n == 0 { 1.0 } else { 0.0 };
            if use_dense {
                let g = scale * (pd[n] - target) / tau / kq as f64;
                if g != 0.0 {
                    for (a, &j) in picks[n].iter().enumerate() {
                        let (qa, pj) = (a * h..(a + 1) * h, j * h..(j + 1) * h);
                        let prow = &passages[c].out.trace.hidden[pj.clone()];
                        let qrow = &q.out.trace.hidden[qa.clone()];
                        for (d, (&x, &y)) in prow.iter().zip(qrow).enumerate() {
                            q_adj[i].hidden[qa.start + d] += g * x;
                            p_adj[c].hidden[pj.start + d] += g * y;
                        }
                    }
                }
            }
            if use_sparse {
                let g = scale * (ps[n] - target);
                if g != 0.0 {
                    let (qa, pa) = (&mut q_adj[i].sparse, &mut p_adj[c].sparse);
                    sparse_dot_backward(&q.sparse, &passages[c].sparse, g, qa, pa);
                }
            }
        }
    }
    loss.total = if use_dense { loss.dense } else { 0.0 } + if use_sparse { loss.sparse } else { 0.0 };

    let grad = with_grad.then(|| {
        let mut grad = vec![0.0; params.as_flat().len()];
        for (e, adj) in queries.iter().zip(&q_adj).chain(passages.iter().zip(&p_adj)) {
            backward_item(params, e, adj, &mut grad);
        }
        grad
    });
    Ok(BatchEval { loss, grad, pattern: pattern.finish() })
}

/// Renders training items into prompts at the configured budgets, keeping at
/// most `negatives_per_query` hard negatives per item.
pub fn render_examples(model: &TextEncoder, items: &[TrainItem], cfg: &TrainConfig) -> Result<Vec<PromptExample>> {
    items
        .iter()
        .map(|it| {
            Ok(PromptExample {
                query: model.prompt(&it.query, Target::Query, cfg.k_q)?,
                positive: model.prompt(&it.positive, Target::Passage, cfg.k_p)?,
                negatives: it
                    .negatives
                    .iter()
                    .take(cfg.negatives_per_query)
                    .map(|n| model.prompt(n, Target::Passage, cfg.k_p))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

fn sgd_update(params: &mut EncoderParams, grad: &[f64], lr: f64) {
    if lr == 0.0 {
        return;
    }
    for (p, g) in params.as_flat_mut().iter_mut().zip(grad) {
        *p -= lr * g;
    }
}

/// One SGD step on a batch of rendered examples.
pub fn train_step_prompts(
    params: &mut EncoderParams,
    batch: &[PromptExample],
    cfg: &TrainConfig,
    filter: &ContentWordFilter,
) -> Result<BatchLoss> {
    cfg.validate()?;
    let eval = batch_objective(params, batch, cfg.tau, cfg.objective, filter, true)?;
    sgd_update(params, eval.grad.as_deref().unwrap_or_default(), cfg.learning_rate);
    Ok(eval.loss)
}

/// One SGD step on a batch of text items.
pub fn train_step(
    model: &mut TextEncoder,
    batch: &[TrainItem],
    cfg: &TrainConfig,
    filter: &ContentWordFilter,
) -> Result<BatchLoss> {
    let examples = render_examples(model, batch, cfg)?;
    train_step_prompts(&mut model.params, &examples, cfg, filter)
}

/// Per-epoch mean batch losses.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<BatchLoss>,
    pub steps: usize,
}

/// Runs `cfg.epochs` passes over `items` in seeded shuffled order.
pub fn train(
    model: &mut TextEncoder,
    items: &[TrainItem],
    cfg: &TrainConfig,
    filter: &ContentWordFilter,
) -> Result<TrainReport> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let examples = render_examples(model, items, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = BatchLoss::default();
        let mut n = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<PromptExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let l = train_step_prompts(&mut model.params, &batch, cfg, filter)?;
            sum.dense += l.dense;
            sum.sparse += l.sparse;
            sum.total += l.total;
            n += 1;
        }
        let mean = BatchLoss { dense: sum.dense / n as f64, sparse: sum.sparse / n as f64, total: sum.total / n as f64 };
        log::info!("epoch {}: loss {:.4} (dense {:.4}, sparse {:.4})", epoch + 1, mean.total, mean.dense, mean.sparse);
        report.epoch_losses.push(mean);
        report.steps += n;
    }
    Ok(report)
}
