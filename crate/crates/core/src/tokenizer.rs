//! Word-level tokenizer with a frequency-capped vocabulary.
//!
//! Text is lowercased and split on whitespace; every punctuation character
//! becomes its own token. The first five ids are reserved for the special
//! tokens used by the prompt layout.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MASK_ID: u32 = 0;
pub const QUOTE_ID: u32 = 1;
pub const TURN_END_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
pub const UNK_ID: u32 = 4;
pub const NUM_RESERVED: u32 = 5;

pub const MASK_TOKEN: &str = "[MASK]";
pub const QUOTE_TOKEN: &str = "\"";
pub const TURN_END_TOKEN: &str = "<turn-end>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "[UNK]";

/// Reserved tokens in id order.
pub const RESERVED_TOKENS: [&str; NUM_RESERVED as usize] =
    [MASK_TOKEN, QUOTE_TOKEN, TURN_END_TOKEN, EOS_TOKEN, UNK_TOKEN];

// Markers recognised verbatim before lowercasing. The quote is handled by the
// punctuation rule.
const SPECIAL_MARKERS: [&str; 4] = [MASK_TOKEN, TURN_END_TOKEN, EOS_TOKEN, UNK_TOKEN];

/// Splits text into normalized word and punctuation tokens.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut rest = text;
    'outer: while let Some(c) = rest.chars().next() {
        for marker in SPECIAL_MARKERS {
            if rest.starts_with(marker) {
                flush(&mut word, &mut out);
                out.push(marker.to_string());
                rest = &rest[marker.len()..];
                continue 'outer;
            }
        }
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else if c.is_whitespace() {
            flush(&mut word, &mut out);
        } else {
            flush(&mut word, &mut out);
            out.push(c.to_lowercase().collect());
        }
        rest = &rest[c.len_utf8()..];
    }
    flush(&mut word, &mut out);
    out
}

fn flush(word: &mut String, out: &mut Vec<String>) {
    if !word.is_empty() {
        out.push(std::mem::take(word));
    }
}

/// Bidirectional token/id mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary holding the `max_vocab` most frequent corpus tokens.
    ///
    /// Frequency ties are broken lexicographically, so the result depends only
    /// on the multiset of tokens in the corpus.
    pub fn build<I, S>(corpus: I, max_vocab: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self::build_with_required(corpus, max_vocab, std::iter::empty::<&str>())
    }

    /// Like [`Vocabulary::build`], but every token of `required` texts gets an
    /// id first, outside the `max_vocab` cap. Used for prompt scaffolds, which
    /// must always be in-vocabulary.
    pub fn build_with_required<I, S, R, T>(corpus: I, max_vocab: usize, required: R) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
        R: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|t| t.to_string()).collect();
        let mut index: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();

        let mut req: Vec<String> = required
            .into_iter()
            .flat_map(|t| pre_tokenize(t.as_ref()))
            .filter(|t| !index.contains_key(t))
            .collect();
        req.sort();
        req.dedup();
        for tok in req {
            index.insert(tok.clone(), tokens.len() as u32);
            tokens.push(tok);
        }

        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            for tok in pre_tokenize(text.as_ref()) {
                if !index.contains_key(&tok) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (tok, _) in ranked.into_iter().take(max_vocab) {
            index.insert(tok.clone(), tokens.len() as u32);
            tokens.push(tok);
        }
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// All tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps text to ids; unknown tokens become [`UNK_ID`].
    pub fn encode(&self, text: &str) -> Vec<u32> {
        pre_tokenize(text)
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK_ID))
            .collect()
    }

    /// Joins the tokens for `ids` with single spaces.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Writes one token per line; the line number is the id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        for tok in &self.tokens {
            writeln!(f, "{tok}")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = BufReader::new(fs::File::open(path)?);
        let mut tokens = Vec::new();
        let mut index = HashMap::new();
        for (lineno, line) in f.lines().enumerate() {
            let line = line?;
            if lineno < RESERVED_TOKENS.len() && line != RESERVED_TOKENS[lineno] {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("expected reserved token {:?}, found {line:?}", RESERVED_TOKENS[lineno]),
                });
            }
            if line.is_empty() {
                return Err(Error::Parse { line: lineno + 1, msg: "empty token".into() });
            }
            if index.insert(line.clone(), lineno as u32).is_some() {
                return Err(Error::Parse { line: lineno + 1, msg: format!("duplicate token {line:?}") });
            }
            tokens.push(line);
        }
        if tokens.len() < RESERVED_TOKENS.len() {
            return Err(Error::Format("vocabulary file is missing the reserved header".into()));
        }
        Ok(Self { tokens, index })
    }
}
