use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::ModalityError;
use crate::text::tokenize;

pub const UNK: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const GRAPH_START: usize = 3;
pub const GRAPH_END: usize = 4;

pub const SPECIALS: [&str; 5] = ["<unk>", "<bos>", "<eos>", "<GRAPH_START>", "<GRAPH_END>"];

/// Word-level vocabulary over [`tokenize`] output. The first five ids are
/// reserved for the special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    /// Most frequent tokens first, ties broken alphabetically; at most
    /// `max_size` entries including the specials.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Self, ModalityError> {
        if max_size < SPECIALS.len() {
            return Err(ModalityError::Config("vocabulary smaller than the special tokens"));
        }
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for text in texts {
            for t in tokenize(text) {
                *counts.entry(t.text).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(ranked.into_iter().take(max_size - SPECIALS.len()).map(|(t, _)| t));
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, ModalityError> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(ModalityError::Vocab("special tokens missing or out of place".to_string()));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(ModalityError::Vocab(alloc::format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Unknown words map to [`UNK`].
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text)
            .into_iter()
            .map(|t| self.id(&t.text).unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .map(|&i| self.token(i).unwrap_or(SPECIALS[UNK]))
            .collect();
        words.join(" ")
    }
}
