//! Retrieval prompts and the masked-position input layout.
//!
//! A rendered prompt is
//! `system <turn-end> user <turn-end> assistant-prefix [MASK]_1 .. [MASK]_K " <turn-end> <eos>`,
//! where the assistant prefix ends with an opening quote.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{
    Vocabulary, EOS_ID, EOS_TOKEN, MASK_ID, MASK_TOKEN, NUM_RESERVED, QUOTE_ID, TURN_END_ID,
    TURN_END_TOKEN, UNK_ID,
};

const SYSTEM_TEXT: &str = "You are an AI assistant that can understand human language.";
const TEXT_SLOT: &str = "{text}";

/// How many words the prompt asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phrasing {
    OneWord,
    AFewWords,
    ThreeWords,
}

impl Phrasing {
    fn request(self) -> &'static str {
        match self {
            Phrasing::OneWord => "one word",
            Phrasing::AFewWords => "a few words",
            Phrasing::ThreeWords => "three words",
        }
    }

    fn subject(self) -> &'static str {
        match self {
            Phrasing::OneWord => "word is",
            Phrasing::AFewWords | Phrasing::ThreeWords => "words are",
        }
    }

    /// Default phrasing for a representation budget: one word for a single
    /// mask, "a few words" otherwise.
    pub fn for_budget(k: usize) -> Self {
        if k <= 1 {
            Phrasing::OneWord
        } else {
            Phrasing::AFewWords
        }
    }
}

impl FromStr for Phrasing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_word" => Ok(Phrasing::OneWord),
            "a_few_words" => Ok(Phrasing::AFewWords),
            "three_words" => Ok(Phrasing::ThreeWords),
            other => Err(Error::UnknownTemplate(format!("phrasing {other:?}"))),
        }
    }
}

impl fmt::Display for Phrasing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phrasing::OneWord => "one_word",
            Phrasing::AFewWords => "a_few_words",
            Phrasing::ThreeWords => "three_words",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Query,
    Passage,
}

impl Target {
    fn label(self) -> &'static str {
        match self {
            Target::Query => "Query",
            Target::Passage => "Passage",
        }
    }

    fn noun(self) -> &'static str {
        match self {
            Target::Query => "query",
            Target::Passage => "passage",
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "query" => Ok(Target::Query),
            "passage" => Ok(Target::Passage),
            other => Err(Error::UnknownTemplate(format!("target {other:?}"))),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.noun())
    }
}

/// The three chat-role texts for one (phrasing, target) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub system: String,
    /// User turn; contains the `{text}` slot exactly once.
    pub user: String,
    /// Assistant prefix; ends with an opening quote.
    pub assistant_prefix: String,
    pub phrasing: Phrasing,
    pub target: Target,
}

impl PromptTemplate {
    pub fn new(phrasing: Phrasing, target: Target) -> Self {
        let user = format!(
            "{}: \"{TEXT_SLOT}\". Use {} to represent the {} in a retrieval task. Make sure your {} in lowercase.",
            target.label(),
            phrasing.request(),
            target.noun(),
            phrasing.subject(),
        );
        Self {
            system: SYSTEM_TEXT.to_string(),
            user,
            assistant_prefix: format!("The {} \"", phrasing.subject()),
            phrasing,
            target,
        }
    }

    /// Looks a template up by its phrasing and target names
    /// (`one_word|a_few_words|three_words`, `query|passage`).
    pub fn parse(phrasing: &str, target: &str) -> Result<Self> {
        Ok(Self::new(phrasing.parse()?, target.parse()?))
    }

    /// A template with caller-provided role texts.
    pub fn custom(
        system: impl Into<String>,
        user: impl Into<String>,
        assistant_prefix: impl Into<String>,
        phrasing: Phrasing,
        target: Target,
    ) -> Result<Self> {
        let t = Self {
            system: system.into(),
            user: user.into(),
            assistant_prefix: assistant_prefix.into(),
            phrasing,
            target,
        };
        if t.user.matches(TEXT_SLOT).count() != 1 {
            return Err(Error::UnknownTemplate("user text must contain one {text} slot".into()));
        }
        if !t.assistant_prefix.ends_with('"') {
            return Err(Error::UnknownTemplate("assistant prefix must end with a quote".into()));
        }
        Ok(t)
    }

    /// All built-in templates.
    pub fn all() -> Vec<Self> {
        let mut out = Vec::new();
        for phrasing in [Phrasing::OneWord, Phrasing::AFewWords, Phrasing::ThreeWords] {
            for target in [Target::Query, Target::Passage] {
                out.push(Self::new(phrasing, target));
            }
        }
        out
    }

    /// Fixed texts of every built-in template, for seeding a vocabulary.
    pub fn scaffold_texts() -> Vec<String> {
        Self::all()
            .into_iter()
            .flat_map(|t| [t.system, t.user.replace(TEXT_SLOT, " "), t.assistant_prefix])
            .collect()
    }

    fn user_parts(&self) -> (&str, &str) {
        self.user.split_once(TEXT_SLOT).unwrap_or((self.user.as_str(), ""))
    }

    /// Renders the prompt as text, with `k` mask markers and the closing tokens.
    pub fn render_text(&self, text: &str, k: usize) -> String {
        let (before, after) = self.user_parts();
        format!(
            "{} {TURN_END_TOKEN} {before}{text}{after} {TURN_END_TOKEN} {}{}\" {TURN_END_TOKEN} {EOS_TOKEN}",
            self.system,
            self.assistant_prefix,
            MASK_TOKEN.repeat(k),
        )
    }
}

/// Token ids of a rendered prompt plus the location of its mask span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedPrompt {
    pub token_ids: Vec<u32>,
    /// Contiguous, ascending indices of the mask tokens.
    pub mask_positions: Vec<usize>,
    /// Closing quote, turn-end, eos.
    pub suffix_len: usize,
    /// Whether the input text was cut to fit the maximum length.
    pub truncated: bool,
}

impl TokenizedPrompt {
    /// Appends `k` masks and the closing tokens to an already tokenized prefix.
    pub fn from_prefix(prefix: &[u32], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let mut token_ids = prefix.to_vec();
        let start = token_ids.len();
        token_ids.extend(std::iter::repeat_n(MASK_ID, k));
        token_ids.extend([QUOTE_ID, TURN_END_ID, EOS_ID]);
        Ok(Self {
            token_ids,
            mask_positions: (start..start + k).collect(),
            suffix_len: 3,
            truncated: false,
        })
    }

    pub fn k(&self) -> usize {
        self.mask_positions.len()
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Tokens before the first mask: the chat prompt and assistant prefix.
    pub fn prefix(&self) -> &[u32] {
        let end = self.mask_positions.first().copied().unwrap_or(self.token_ids.len());
        &self.token_ids[..end]
    }

    /// Checks the layout invariants: contiguous masks followed by the suffix.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Format(format!("tokenized prompt: {m}")));
        let Some(&first) = self.mask_positions.first() else {
            return bad("no mask positions");
        };
        for (i, &p) in self.mask_positions.iter().enumerate() {
            if p != first + i || self.token_ids.get(p) != Some(&MASK_ID) {
                return bad("mask positions are not a contiguous mask span");
            }
        }
        let end = first + self.mask_positions.len();
        if first == 0 || end + self.suffix_len != self.token_ids.len() {
            return bad("masks must sit between prompt and suffix");
        }
        Ok(())
    }
}

/// Renders and tokenizes a retrieval prompt with `k` mask positions.
///
/// Only the input text is truncated to fit `max_len`; the scaffold and
/// masks are always kept whole.
pub fn render_prompt(
    vocab: &Vocabulary,
    text: &str,
    template: &PromptTemplate,
    k: usize,
    max_len: usize,
) -> Result<TokenizedPrompt> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut text_ids: Vec<u32> = vocab
        .encode(text)
        .into_iter()
        // Special markers typed inside the input text are not structure.
        .map(|id| if id < NUM_RESERVED && id != QUOTE_ID { UNK_ID } else { id })
        .collect();
    if text_ids.is_empty() {
        return Err(Error::EmptyText);
    }
    let (before, after) = template.user_parts();
    let mut head = vocab.encode(&template.system);
    head.push(TURN_END_ID);
    head.extend(vocab.encode(before));
    let mut tail = vocab.encode(after);
    tail.push(TURN_END_ID);
    tail.extend(vocab.encode(&template.assistant_prefix));

    let fixed = head.len() + tail.len() + k + 3;
    if fixed >= max_len {
        return Err(Error::TooLong { needed: fixed + 1, max: max_len });
    }
    let budget = max_len - fixed;
    let truncated = text_ids.len() > budget;
    text_ids.truncate(budget);

    let mut prefix = head;
    prefix.extend(text_ids);
    prefix.extend(tail);
    let mut out = TokenizedPrompt::from_prefix(&prefix, k)?;
    out.truncated = truncated;
    Ok(out)
}
