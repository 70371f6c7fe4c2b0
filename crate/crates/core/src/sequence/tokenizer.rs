//! Tokenizer contracts and deterministic stand-ins.
//!
//! Real text and visual tokenizers live outside this crate. The mocks here
//! produce stable ids so that packing, masking and serialization can be
//! exercised end to end.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SequenceError;
use crate::seed::{digest, rng_for, Stream};

/// Id layout: four special ids, then the text range, then the visual range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerSpec {
    /// Size of the text id space, specials included.
    pub text_vocab_size: u32,
    pub visual_codebook_size: u32,
}

impl Default for TokenizerSpec {
    fn default() -> Self {
        TokenizerSpec { text_vocab_size: 32_000, visual_codebook_size: 16_384 }
    }
}

impl TokenizerSpec {
    pub const BOS: u32 = 0;
    pub const EOS: u32 = 1;
    pub const IMG_BEGIN: u32 = 2;
    pub const IMG_END: u32 = 3;
    pub const FIRST_TEXT_ID: u32 = 4;

    pub fn text_capacity(&self) -> u32 {
        self.text_vocab_size.saturating_sub(Self::FIRST_TEXT_ID)
    }

    pub fn visual_offset(&self) -> u32 {
        self.text_vocab_size
    }

    pub fn is_visual(&self, id: u32) -> bool {
        id >= self.visual_offset() && id - self.visual_offset() < self.visual_codebook_size
    }

    pub fn is_special(id: u32) -> bool {
        id < Self::FIRST_TEXT_ID
    }
}

pub trait TextTokenizer {
    fn encode(&self, text: &str) -> Result<Vec<u32>, SequenceError>;
}

pub trait VisualTokenizer {
    /// Visual ids for an image id or a region key.
    fn encode(&self, key: &str) -> Result<Vec<u32>, SequenceError>;
}

/// Alphanumeric runs and single punctuation characters; whitespace separates.
pub fn split_words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            start.get_or_insert(i);
            continue;
        }
        if let Some(s) = start.take() {
            out.push(&text[s..i]);
        }
        if !c.is_whitespace() {
            out.push(&text[i..i + c.len_utf8()]);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

/// Word-level vocabulary that assigns ids in first-seen order.
///
/// Growth happens through [`MockTextTokenizer::observe`] in a serial pass;
/// [`TextTokenizer::encode`] is read-only and rejects unseen words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockTextTokenizer {
    spec: TokenizerSpec,
    words: Vec<String>,
    ids: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    text_vocab_size: u32,
    words: Vec<String>,
}

impl MockTextTokenizer {
    pub fn new(spec: TokenizerSpec) -> Self {
        MockTextTokenizer { spec, words: Vec::new(), ids: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    fn intern(&mut self, word: &str) -> Result<u32, SequenceError> {
        if let Some(&id) = self.ids.get(word) {
            return Ok(id);
        }
        if self.words.len() as u32 >= self.spec.text_capacity() {
            return Err(SequenceError::VocabOverflow { capacity: self.spec.text_capacity() });
        }
        let id = TokenizerSpec::FIRST_TEXT_ID + self.words.len() as u32;
        self.words.push(word.to_string());
        self.ids.insert(word.to_string(), id);
        Ok(id)
    }

    /// Adds every new word of `text` to the vocabulary.
    pub fn observe(&mut self, text: &str) -> Result<(), SequenceError> {
        for w in split_words(text) {
            self.intern(w)?;
        }
        Ok(())
    }

    /// Encodes while growing the vocabulary.
    pub fn encode_growing(&mut self, text: &str) -> Result<Vec<u32>, SequenceError> {
        split_words(text).into_iter().map(|w| self.intern(w)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&VocabFile { text_vocab_size: self.spec.text_vocab_size, words: self.words.clone() })
            .expect("vocabulary serializes")
    }

    pub fn from_json(s: &str, spec: TokenizerSpec) -> Result<Self, SequenceError> {
        let file: VocabFile = serde_json::from_str(s).map_err(|e| SequenceError::BadVocab(e.to_string()))?;
        if file.text_vocab_size != spec.text_vocab_size {
            return Err(SequenceError::BadVocab(format!(
                "vocabulary built for text_vocab_size {}, configured {}",
                file.text_vocab_size, spec.text_vocab_size
            )));
        }
        let mut t = MockTextTokenizer::new(spec);
        for w in &file.words {
            if t.ids.contains_key(w) {
                return Err(SequenceError::BadVocab(format!("duplicate word `{w}`")));
            }
            t.intern(w)?;
        }
        Ok(t)
    }
}

impl TextTokenizer for MockTextTokenizer {
    fn encode(&self, text: &str) -> Result<Vec<u32>, SequenceError> {
        split_words(text)
            .into_iter()
            .map(|w| self.ids.get(w).copied().ok_or_else(|| SequenceError::UnknownWord(w.to_string())))
            .collect()
    }
}

pub const MIN_VISUAL_LEN: usize = 32;
pub const MAX_VISUAL_LEN: usize = 256;

/// Hash-derived visual sequences of length `32 + (h mod 225)`.
///
/// With a registry, keys outside it are unresolved references.
#[derive(Debug, Clone, Default)]
pub struct MockVisualTokenizer {
    spec: TokenizerSpec,
    registry: Option<HashSet<String>>,
}

impl MockVisualTokenizer {
    pub fn new(spec: TokenizerSpec) -> Self {
        MockVisualTokenizer { spec, registry: None }
    }

    pub fn with_registry(spec: TokenizerSpec, keys: impl IntoIterator<Item = String>) -> Self {
        MockVisualTokenizer { spec, registry: Some(keys.into_iter().collect()) }
    }

    pub fn register(&mut self, key: impl Into<String>) {
        self.registry.get_or_insert_with(HashSet::new).insert(key.into());
    }

    /// Sequence length for `key`, without generating the ids.
    pub fn length_of(key: &str) -> usize {
        let d = digest(0, Stream::Visual, &[key.as_bytes()]);
        let h = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
        MIN_VISUAL_LEN + (h % (MAX_VISUAL_LEN - MIN_VISUAL_LEN + 1) as u64) as usize
    }
}

impl VisualTokenizer for MockVisualTokenizer {
    fn encode(&self, key: &str) -> Result<Vec<u32>, SequenceError> {
        if let Some(reg) = &self.registry {
            if !reg.contains(key) {
                return Err(SequenceError::UnresolvedRef(key.to_string()));
            }
        }
        let n = Self::length_of(key);
        let mut rng = rng_for(1, Stream::Visual, &[key.as_bytes()]);
        let offset = self.spec.visual_offset();
        Ok((0..n).map(|_| offset + rng.random_range(0..self.spec.visual_codebook_size)).collect())
    }
}
