//! Whitespace word-level tokenizer over a closed corpus vocabulary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const MASK: usize = 3;
pub const NUM_SPECIAL: usize = 4;

pub const PAD_TOKEN: &str = "[PAD]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const MASK_TOKEN: &str = "[MASK]";

/// Word vocabulary with four reserved ids. Words are stored sorted, so the
/// mapping is a pure function of the word set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

/// A right-padded token sequence of fixed length `max_text_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    /// Prefix of `true` covering CLS + words + SEP, then `false` padding.
    pub mask: Vec<bool>,
}

impl Vocab {
    /// Build from caption strings; every whitespace-separated word becomes
    /// one vocabulary entry.
    pub fn build<'a>(captions: impl IntoIterator<Item = &'a str>) -> Vocab {
        let mut set: Vec<String> = captions
            .into_iter()
            .flat_map(|c| c.split_whitespace())
            .map(|w| w.to_string())
            .collect();
        set.sort();
        set.dedup();
        Vocab::from_words(set)
    }

    pub fn from_words(words: Vec<String>) -> Vocab {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), NUM_SPECIAL + i))
            .collect();
        Vocab { words, index }
    }

    /// Re-derive the word index (after deserialization).
    pub fn rebuild_index(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), NUM_SPECIAL + i))
            .collect();
    }

    pub fn size(&self) -> usize {
        NUM_SPECIAL + self.words.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_id(&self, word: &str) -> Result<usize> {
        self.index
            .get(word)
            .copied()
            .ok_or_else(|| Error::Input(format!("word not in vocabulary: {word:?}")))
    }

    pub fn token_str(&self, id: usize) -> Result<&str> {
        match id {
            PAD => Ok(PAD_TOKEN),
            CLS => Ok(CLS_TOKEN),
            SEP => Ok(SEP_TOKEN),
            MASK => Ok(MASK_TOKEN),
            _ => self
                .words
                .get(id - NUM_SPECIAL)
                .map(|s| s.as_str())
                .ok_or_else(|| Error::Input(format!("token id {id} out of vocabulary"))),
        }
    }

    /// Encode `[CLS] words... [SEP]` right-padded to `max_len`. Words beyond
    /// the window are truncated.
    pub fn encode(&self, text: &str, max_len: usize) -> Result<TokenSequence> {
        let mut ids = vec![CLS];
        for w in text.split_whitespace() {
            if ids.len() == max_len - 1 {
                break;
            }
            ids.push(self.word_id(w)?);
        }
        ids.push(SEP);
        let valid = ids.len();
        ids.resize(max_len, PAD);
        let mask = (0..max_len).map(|i| i < valid).collect();
        Ok(TokenSequence { ids, mask })
    }

    /// Join several captions with `[SEP]` into one query, then encode.
    pub fn encode_paragraph(&self, captions: &[String], max_len: usize) -> Result<TokenSequence> {
        let joined = captions.join(&format!(" {SEP_TOKEN} "));
        // [SEP] inside the text maps onto the separator id directly.
        let mut ids = vec![CLS];
        for w in joined.split_whitespace() {
            if ids.len() == max_len - 1 {
                break;
            }
            if w == SEP_TOKEN {
                ids.push(SEP);
            } else {
                ids.push(self.word_id(w)?);
            }
        }
        ids.push(SEP);
        let valid = ids.len();
        ids.resize(max_len, PAD);
        let mask = (0..max_len).map(|i| i < valid).collect();
        Ok(TokenSequence { ids, mask })
    }

    /// Render generated ids back to words, dropping specials.
    pub fn decode_words(&self, ids: &[usize]) -> Result<String> {
        let mut out: Vec<&str> = Vec::new();
        for &id in ids {
            if id == SEP {
                break;
            }
            if id == PAD || id == CLS || id == MASK {
                continue;
            }
            out.push(self.token_str(id)?);
        }
        Ok(out.join(" "))
    }
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions eligible for MLM corruption: valid, non-special tokens.
    pub fn maskable(&self) -> Vec<usize> {
        self.ids
            .iter()
            .enumerate()
            .filter(|(i, &id)| self.mask[*i] && id >= NUM_SPECIAL)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.ids.len() != self.mask.len() {
            return Err(Error::Input("ids and mask length differ".into()));
        }
        for &id in &self.ids {
            if id >= vocab_size {
                return Err(Error::Input(format!(
                    "token id {id} out of vocabulary (size {vocab_size})"
                )));
            }
        }
        // mask must be a prefix of 1s
        let mut seen_pad = false;
        for &m in &self.mask {
            if seen_pad && m {
                return Err(Error::Input("mask is not a contiguous prefix".into()));
            }
            if !m {
                seen_pad = true;
            }
        }
        Ok(())
    }
}
