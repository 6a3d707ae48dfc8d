//! Text-level encoding: vocabulary + parameters + prompt settings.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode_parallel, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::prompt::{render_prompt, Phrasing, PromptTemplate, Target, TokenizedPrompt};
use crate::repr::{Item, RepresentationSet};
use crate::tokenizer::{pre_tokenize, Vocabulary, NUM_RESERVED};

pub const DEFAULT_MAX_LEN: usize = 256;

/// Prompt settings stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSettings {
    pub max_len: usize,
    /// Fixed phrasing; `None` picks one word for `k = 1` and "a few words"
    /// otherwise.
    pub phrasing: Option<Phrasing>,
}

impl Default for PromptSettings {
    fn default() -> Self {
        Self { max_len: DEFAULT_MAX_LEN, phrasing: None }
    }
}

/// Renders texts into prompts and encodes them in one parallel pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub vocab: Vocabulary,
    pub params: EncoderParams,
    pub settings: PromptSettings,
}

impl TextEncoder {
    pub fn new(vocab: Vocabulary, params: EncoderParams, settings: PromptSettings) -> Result<Self> {
        if vocab.len() != params.vocab_size() {
            return Err(Error::DimensionMismatch(format!(
                "vocabulary has {} tokens, model expects {}",
                vocab.len(),
                params.vocab_size()
            )));
        }
        Ok(Self { vocab, params, settings })
    }

    /// Fresh model whose reserved and scaffold token embeddings start at zero.
    pub fn init(vocab: Vocabulary, config: EncoderConfig, settings: PromptSettings) -> Result<Self> {
        let mut params = EncoderParams::init(config)?;
        params.zero_embeddings(scaffold_ids(&vocab))?;
        Self::new(vocab, params, settings)
    }

    pub fn template(&self, target: Target, k: usize) -> PromptTemplate {
        let phrasing = self.settings.phrasing.unwrap_or_else(|| Phrasing::for_budget(k));
        PromptTemplate::new(phrasing, target)
    }

    pub fn prompt(&self, text: &str, target: Target, k: usize) -> Result<TokenizedPrompt> {
        render_prompt(&self.vocab, text, &self.template(target, k), k, self.settings.max_len)
    }

    pub fn encode(&self, text: &str, target: Target, k: usize) -> Result<RepresentationSet> {
        encode_parallel(&self.params, &self.prompt(text, target, k)?)
    }

    /// Encodes `(id, text)` pairs in parallel, keeping input order.
    pub fn encode_all(&self, texts: &[(String, String)], target: Target, k: usize) -> Result<Vec<Item>> {
        texts
            .par_iter()
            .map(|(id, text)| Ok((id.clone(), self.encode(text, target, k)?)))
            .collect()
    }

    /// Writes `vocab.txt`, `model.bin` and `prompt.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.vocab.save(dir.join("vocab.txt"))?;
        self.params.save(dir.join("model.bin"))?;
        fs::write(dir.join("prompt.json"), serde_json::to_string_pretty(&self.settings)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let vocab = Vocabulary::load(dir.join("vocab.txt"))?;
        let params = EncoderParams::load(dir.join("model.bin"))?;
        let settings_path = dir.join("prompt.json");
        let settings = if settings_path.exists() {
            serde_json::from_str(&fs::read_to_string(settings_path)?)?
        } else {
            PromptSettings::default()
        };
        Self::new(vocab, params, settings)
    }
}

/// Reserved ids plus every token of every prompt template.
pub fn scaffold_ids(vocab: &Vocabulary) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..NUM_RESERVED).collect();
    ids.extend(PromptTemplate::scaffold_texts().iter().flat_map(|t| pre_tokenize(t)).filter_map(|t| vocab.id(&t)));
    ids.sort_unstable();
    ids.dedup();
    ids
}
