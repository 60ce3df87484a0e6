//! Character inventory shared by the recognizer, the decoder and the
//! language model.
//!
//! Id layout: `0` is the CTC blank, `1..=n` are the characters in sorted
//! order, `n + 1` is end-of-sentence and `n + 2` is beginning-of-sentence.
//! Recognizer labels are the prefix `0..=n` of this range.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

pub const BLANK: u32 = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, u32>,
}

impl Vocabulary {
    /// Builds the sorted union of all given characters.
    pub fn new<I: IntoIterator<Item = char>>(chars: I) -> Self {
        let set: BTreeSet<char> = chars.into_iter().collect();
        let chars: Vec<char> = set.into_iter().collect();
        let index = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i as u32 + 1))
            .collect();
        Vocabulary { chars, index }
    }

    /// Union of the characters of every string in `texts` plus `extra`.
    pub fn from_texts<'a, I, E>(texts: I, extra: E) -> Self
    where
        I: IntoIterator<Item = &'a str>,
        E: IntoIterator<Item = char>,
    {
        Self::new(texts.into_iter().flat_map(str::chars).chain(extra))
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn char_count(&self) -> usize {
        self.chars.len()
    }

    /// Number of recognizer output labels (characters plus blank).
    pub fn label_count(&self) -> usize {
        self.chars.len() + 1
    }

    /// Total id range including blank, EOS and BOS.
    pub fn len(&self) -> usize {
        self.chars.len() + 3
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn eos(&self) -> u32 {
        self.chars.len() as u32 + 1
    }

    pub fn bos(&self) -> u32 {
        self.chars.len() as u32 + 2
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    pub fn id(&self, c: char) -> Result<u32> {
        self.index.get(&c).copied().ok_or(Error::OutOfVocabulary(c))
    }

    /// Character for a character id; `None` for blank, EOS, BOS or out of range.
    pub fn char_of(&self, id: u32) -> Option<char> {
        if id == BLANK {
            return None;
        }
        self.chars.get(id as usize - 1).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        text.chars().map(|c| self.id(c)).collect()
    }

    /// Maps character ids back to text. Non-character ids are skipped.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().filter_map(|&id| self.char_of(id)).collect()
    }

    /// Display form of a label or token id, used in logs and ARPA files.
    pub fn token_name(&self, id: u32) -> String {
        if id == BLANK {
            "<blank>".to_string()
        } else if id == self.eos() {
            "</s>".to_string()
        } else if id == self.bos() {
            "<s>".to_string()
        } else {
            match self.char_of(id) {
                Some(' ') => "<sp>".to_string(),
                Some(c) => c.to_string(),
                None => format!("<{id}>"),
            }
        }
    }
}
