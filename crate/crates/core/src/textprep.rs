//! Tokenization, vocabulary construction and fixed-length encoding.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const OOV_ID: u32 = 1;
/// First id handed out to a vocabulary word.
const FIRST_WORD_ID: u32 = 2;
const VOCAB_FILE_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Total id space, including the pad and OOV ids.
    pub vocab_size: usize,
    /// Sequence length in tokens.
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { vocab_size: 8000, max_len: 600 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 3 {
            return Err(Error::InvalidConfig(format!("vocab_size must be >= 3, got {}", self.vocab_size)));
        }
        if self.max_len < 1 {
            return Err(Error::InvalidConfig("max_len must be >= 1".into()));
        }
        Ok(())
    }
}

/// Lowercases, turns every non-alphanumeric character into a space and
/// splits on whitespace.
pub fn normalize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Frequency-ranked word list. Word at position `p` has id `p + 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    config: EncoderConfig,
    words: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u64,
    vocab_size: usize,
    max_len: usize,
    words: Vec<String>,
}

impl Vocabulary {
    /// Counts every token and keeps the `vocab_size - 2` most frequent,
    /// breaking frequency ties by ascending lexicographic order.
    pub fn build<I, T, S>(token_lists: I, config: EncoderConfig) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        config.validate()?;
        let mut counts: HashMap<String, u64> = HashMap::new();
        for list in token_lists {
            for tok in list {
                let tok = tok.as_ref();
                match counts.get_mut(tok) {
                    Some(c) => *c += 1,
                    None => {
                        counts.insert(tok.to_owned(), 1);
                    }
                }
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(config.vocab_size - FIRST_WORD_ID as usize);
        Self::from_words(ranked.into_iter().map(|(w, _)| w).collect(), config)
    }

    fn from_words(words: Vec<String>, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        if words.len() > config.vocab_size - FIRST_WORD_ID as usize {
            return Err(Error::InvalidConfig(format!(
                "{} words do not fit vocab_size {}",
                words.len(),
                config.vocab_size
            )));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (p, w) in words.iter().enumerate() {
            if index.insert(w.clone(), p as u32 + FIRST_WORD_ID).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Self { config, words, index })
    }

    pub fn config(&self) -> EncoderConfig {
        self.config
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(OOV_ID)
    }

    /// Encodes `normalize(title) ++ normalize(sentence)`, keeping the first
    /// `max_len` tokens and padding at the end.
    pub fn encode(&self, title: &str, sentence: &str) -> TokenSequence {
        let max_len = self.config.max_len;
        let mut ids = Vec::with_capacity(max_len);
        ids.extend(
            normalize(title)
                .iter()
                .chain(normalize(sentence).iter())
                .take(max_len)
                .map(|t| self.id(t)),
        );
        let true_len = ids.len();
        ids.resize(max_len, PAD_ID);
        TokenSequence { ids, true_len }
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        let file = VocabFile {
            version: VOCAB_FILE_VERSION,
            vocab_size: self.config.vocab_size,
            max_len: self.config.max_len,
            words: self.words.clone(),
        };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let file: VocabFile = serde_json::from_reader(reader)?;
        if file.version != VOCAB_FILE_VERSION {
            return Err(Error::Version { what: "vocabulary", found: file.version, expected: VOCAB_FILE_VERSION });
        }
        Self::from_words(file.words, EncoderConfig { vocab_size: file.vocab_size, max_len: file.max_len })
    }
}

/// A padded id sequence of length exactly `max_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// Number of leading non-pad positions.
    pub true_len: usize,
}

impl TokenSequence {
    pub fn tokens(&self) -> &[u32] {
        &self.ids[..self.true_len]
    }

    /// Sequences with no real token become a single OOV token so the
    /// classifier always has something to read.
    pub fn or_oov(mut self) -> Self {
        if self.true_len == 0 {
            self.ids[0] = OOV_ID;
            self.true_len = 1;
        }
        self
    }
}
