//! Seeded lexical-overlap retrieval task.
//!
//! Passages are bags of pseudo-words drawn mostly from one topic, with
//! stopwords mixed in. Each evaluation query is a keyword subset contained in
//! exactly one passage, plus one off-passage noise word. Training queries are
//! built the same way over a disjoint set of target passages, with hard
//! negatives ranked by keyword overlap.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::save_texts;
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, Judgments, Metric};
use crate::retrieval::Retriever;
use crate::scoring::RetrievalMode;
use crate::training::{save_train_items, TrainItem};

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const FILLERS: [&str; 12] = ["the", "of", "and", "a", "in", "is", "to", "with", "for", "on", "by", "from"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_passages: usize,
    pub n_queries: usize,
    /// Training queries per non-evaluation passage.
    pub train_per_passage: usize,
    pub n_topics: usize,
    pub words_per_topic: usize,
    /// Shared words that can appear in any passage.
    pub n_common: usize,
    pub min_passage_words: usize,
    pub max_passage_words: usize,
    /// Share of passage content words drawn from the passage's topic.
    pub topic_share: f64,
    /// Chance of a stopword after each content word.
    pub filler_rate: f64,
    pub min_keywords: usize,
    pub max_keywords: usize,
    pub hard_negatives: usize,
    /// Also build training queries for the evaluation targets. Their keyword
    /// subsets are drawn independently of the evaluation queries.
    pub train_on_eval_targets: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_passages: 500,
            n_queries: 200,
            train_per_passage: 2,
            n_topics: 25,
            words_per_topic: 40,
            n_common: 60,
            min_passage_words: 10,
            max_passage_words: 16,
            topic_share: 0.75,
            filler_rate: 0.35,
            min_keywords: 3,
            max_keywords: 4,
            hard_negatives: 7,
            train_on_eval_targets: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub passages: Vec<(String, String)>,
    pub queries: Vec<(String, String)>,
    pub judgments: Judgments,
    pub train: Vec<TrainItem>,
    /// Keywords each evaluation query was built from, before noise.
    pub query_keywords: Vec<Vec<String>>,
}

/// Distinct pseudo-words of two or three syllables.
fn pseudo_words(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=3);
        let w: String = (0..syllables)
            .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
            .collect();
        if !FILLERS.contains(&w.as_str()) && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn is_unique_subset(keys: &[String], target: usize, bags: &[BTreeSet<String>]) -> bool {
    bags.iter().enumerate().all(|(i, bag)| i == target || !keys.iter().all(|k| bag.contains(k)))
}

struct Generator<'a> {
    cfg: &'a SyntheticConfig,
    rng: ChaCha8Rng,
    vocab: Vec<String>,
    bags: Vec<BTreeSet<String>>,
}

impl Generator<'_> {
    /// Picks a keyword subset of passage `p` that no other passage contains.
    fn keywords(&mut self, p: usize) -> Option<Vec<String>> {
        let words: Vec<String> = self.bags[p].iter().cloned().collect();
        for _ in 0..50 {
            let n = self.rng.random_range(self.cfg.min_keywords..=self.cfg.max_keywords).min(words.len());
            let keys: Vec<String> = words.choose_multiple(&mut self.rng, n).cloned().collect();
            if is_unique_subset(&keys, p, &self.bags) {
                return Some(keys);
            }
        }
        None
    }

    /// Keywords in random order plus one word absent from the passage.
    fn query_text(&mut self, p: usize, keys: &[String]) -> String {
        let mut words = keys.to_vec();
        loop {
            let noise = self.vocab.choose(&mut self.rng).unwrap();
            if !self.bags[p].contains(noise) {
                words.push(noise.clone());
                break;
            }
        }
        words.shuffle(&mut self.rng);
        words.join(" ")
    }

    /// Passages sharing the most keywords with the query, ties by index.
    fn hard_negatives(&self, p: usize, keys: &[String]) -> Vec<usize> {
        let mut scored: Vec<(usize, usize)> = (0..self.bags.len())
            .filter(|&i| i != p)
            .map(|i| (keys.iter().filter(|k| self.bags[i].contains(*k)).count(), i))
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().take(self.cfg.hard_negatives).map(|s| s.1).collect()
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticTask> {
    if cfg.n_queries > cfg.n_passages
        || cfg.min_keywords == 0
        || cfg.min_keywords > cfg.max_keywords
        || cfg.min_passage_words < cfg.max_keywords
        || cfg.min_passage_words > cfg.max_passage_words
        || cfg.n_topics == 0
        || cfg.words_per_topic == 0
    {
        return Err(Error::InvalidArgument(format!("inconsistent synthetic config {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = pseudo_words(&mut rng, cfg.n_topics * cfg.words_per_topic + cfg.n_common);
    let (topic_words, common) = vocab.split_at(cfg.n_topics * cfg.words_per_topic);

    let mut passages = Vec::with_capacity(cfg.n_passages);
    let mut bags = Vec::with_capacity(cfg.n_passages);
    for i in 0..cfg.n_passages {
        let topic = &topic_words[(i % cfg.n_topics) * cfg.words_per_topic..][..cfg.words_per_topic];
        let len = rng.random_range(cfg.min_passage_words..=cfg.max_passage_words);
        let mut text = Vec::new();
        let mut bag = BTreeSet::new();
        while bag.len() < len {
            let pool = if common.is_empty() || rng.random_bool(cfg.topic_share) { topic } else { common };
            let w = pool.choose(&mut rng).unwrap();
            if bag.insert(w.clone()) {
                text.push(w.clone());
                if rng.random_bool(cfg.filler_rate) {
                    text.push(FILLERS.choose(&mut rng).unwrap().to_string());
                }
            }
        }
        passages.push((format!("p{i:04}"), text.join(" ")));
        bags.push(bag);
    }

    let mut order: Vec<usize> = (0..cfg.n_passages).collect();
    order.shuffle(&mut rng);
    let mut g = Generator { cfg, rng, vocab, bags };

    let mut queries = Vec::with_capacity(cfg.n_queries);
    let mut query_keywords = Vec::with_capacity(cfg.n_queries);
    let mut judgments = Judgments::new();
    let mut used = 0;
    let mut eval_keys: HashMap<usize, BTreeSet<String>> = HashMap::new();
    while queries.len() < cfg.n_queries {
        let p = *order
            .get(used)
            .ok_or_else(|| Error::InvalidArgument("too few passages with a unique keyword subset".into()))?;
        used += 1;
        let Some(keys) = g.keywords(p) else { continue };
        let qid = format!("q{:04}", queries.len());
        queries.push((qid.clone(), g.query_text(p, &keys)));
        judgments.insert(qid, passages[p].0.clone(), 1);
        eval_keys.insert(p, keys.iter().cloned().collect());
        query_keywords.push(keys);
    }

    let mut train = Vec::new();
    let targets = if cfg.train_on_eval_targets { &order[..] } else { &order[used..] };
    for &p in targets {
        for _ in 0..cfg.train_per_passage {
            let fresh = |k: &Vec<String>| eval_keys.get(&p) != Some(&k.iter().cloned().collect());
            let Some(keys) = (0..50).find_map(|_| g.keywords(p).filter(fresh)) else { continue };
            let query = g.query_text(p, &keys);
            let negatives = g.hard_negatives(p, &keys).into_iter().map(|i| passages[i].1.clone()).collect();
            train.push(TrainItem { query, positive: passages[p].1.clone(), negatives });
        }
    }
    Ok(SyntheticTask { passages, queries, judgments, train, query_keywords })
}

impl SyntheticTask {
    /// Writes `passages.jsonl`, `queries.jsonl`, `qrels.txt` and `train.jsonl`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        save_texts(dir.join("passages.jsonl"), &self.passages)?;
        save_texts(dir.join("queries.jsonl"), &self.queries)?;
        self.judgments.save(dir.join("qrels.txt"))?;
        save_train_items(dir.join("train.jsonl"), &self.train)
    }

    /// Every passage and query text, for building a vocabulary.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.passages.iter().chain(&self.queries).map(|(_, t)| t.as_str()).chain(self.train.iter().map(|t| t.query.as_str()))
    }
}

/// Aggregate metric of each retrieval mode on one index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeScores {
    pub dense: f64,
    pub sparse: f64,
    pub hybrid: f64,
}

impl ModeScores {
    pub fn get(&self, mode: RetrievalMode) -> f64 {
        match mode {
            RetrievalMode::Dense => self.dense,
            RetrievalMode::Sparse => self.sparse,
            RetrievalMode::Hybrid => self.hybrid,
        }
    }
}

/// Indexes the passages at `k_p` and scores the evaluation queries at `k_q`
/// under all three modes.
pub fn evaluate_modes(retriever: &Retriever, task: &SyntheticTask, k_q: usize, k_p: usize, metric: Metric) -> Result<ModeScores> {
    let index = retriever.index(&task.passages, k_p)?;
    let queries = retriever.encode_queries(&task.queries, k_q)?;
    let score = |mode| -> Result<f64> { Ok(evaluate(&retriever.search(&index, &queries, mode)?, &task.judgments, metric).mean) };
    Ok(ModeScores {
        dense: score(RetrievalMode::Dense)?,
        sparse: score(RetrievalMode::Sparse)?,
        hybrid: score(RetrievalMode::Hybrid)?,
    })
}
