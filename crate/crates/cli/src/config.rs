//! Flat `key = value` configuration with namespaced keys.
//!
//! Precedence: command-line flag > `--set` override > config file > default.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

/// Every accepted key with its default value.
pub const KEYS: &[(&str, &str)] = &[
    ("encoder.hidden_dim", "128"),
    ("encoder.layers", "2"),
    ("encoder.max_vocab", "8192"),
    ("encoder.max_len", "256"),
    ("encoder.seed", "0"),
    ("encoder.phrasing", "auto"),
    ("encoder.top_t", "0"),
    ("index.cutoff", "1000"),
    ("index.centroids", "0"),
    ("index.n_probe", "8"),
    ("index.seed", "0"),
    ("train.epochs", "5"),
    ("train.learning_rate", "0.0003"),
    ("train.batch_size", "8"),
    ("train.negatives", "15"),
    ("train.tau", "0.01"),
    ("train.k_q", "4"),
    ("train.k_p", "4"),
    ("train.seed", "0"),
    ("train.objective", "combined"),
    ("eval.metric", "mrr@10"),
    ("eval.mode", "hybrid"),
    ("eval.q_axis", "1,2,4,8,16"),
    ("eval.p_axis", "1,2,4,8,16"),
    ("eval.k_q", "4"),
    ("eval.k_p", "4"),
    ("bench.warmup_runs", "5"),
    ("bench.timed_runs", "20"),
    ("bench.input_lengths", "32,64,128"),
    ("bench.index_sizes", "1000,2000,4000"),
    ("bench.k_values", "1,2,4,8"),
    ("bench.search_budgets", "1x1,4x4,4x16"),
    ("bench.hidden_dim", "128"),
    ("bench.layers", "2"),
    ("bench.vocab_size", "8192"),
    ("bench.n_probe", "2"),
    ("bench.seed", "0"),
    ("synth.passages", "500"),
    ("synth.queries", "200"),
    ("synth.train_per_passage", "2"),
    ("synth.hard_negatives", "7"),
    ("synth.train_on_eval_targets", "true"),
    ("synth.seed", "0"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> Result<(), CliError> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(CliError::UnknownKey(key.to_string()))
    }
}

fn split_assignment(s: &str) -> Result<(&str, &str), CliError> {
    let (k, v) = s.split_once('=').ok_or_else(|| CliError::Config(format!("expected key=value, got {s:?}")))?;
    Ok((k.trim(), v.trim()))
}

impl Default for Config {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }
}

impl Config {
    /// Parses file text. Blank lines and lines starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = split_assignment(line).map_err(|e| CliError::Config(format!("line {}: {e}", n + 1)))?;
            known(k)?;
            self.values.insert(k.to_string(), v.to_string());
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Applies `key=value` overrides.
    pub fn apply_sets(&mut self, sets: &[String]) -> Result<(), CliError> {
        for s in sets {
            let (k, v) = split_assignment(s)?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<(), CliError> {
        known(key)?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Sets `key` when a command-line flag was given.
    pub fn flag<T: ToString>(&mut self, key: &str, value: Option<T>) -> Result<(), CliError> {
        match value {
            Some(v) => self.set(key, v),
            None => Ok(()),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered config key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| CliError::Config(format!("{key} = {raw:?}: {e}")))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse().map_err(|e| CliError::Config(format!("{key} = {raw:?}: {e}"))))
            .collect()
    }

    /// Comma-separated `AxB` pairs.
    pub fn pairs(&self, key: &str) -> Result<Vec<(usize, usize)>, CliError> {
        let raw = self.raw(key);
        let bad = || CliError::Config(format!("{key} = {raw:?}: expected pairs like 4x16"));
        raw.split(',')
            .map(|p| {
                let (a, b) = p.trim().split_once('x').ok_or_else(bad)?;
                Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
            })
            .collect()
    }

    /// Every key in sorted order, one `key = value` per line.
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
