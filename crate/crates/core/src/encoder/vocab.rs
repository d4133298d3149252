use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const EOS: u32 = 2;

const RESERVED: [&str; 3] = ["<pad>", "<unk>", "<eos>"];

/// Lowercases and splits on whitespace and punctuation.
pub fn normalize_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token ↔ id map with reserved PAD/UNK/EOS ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Ids are assigned by descending frequency, ties broken lexicographically.
    pub fn build<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in normalize_words(text.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !RESERVED.contains(&w.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(
            RESERVED
                .iter()
                .map(|s| s.to_string())
                .chain(ranked.into_iter().map(|(w, _)| w))
                .collect(),
        )
        .expect("built vocabulary is well formed")
    }

    /// Tokens in id order; the first three must be the reserved tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..3] != RESERVED {
            return Err(Error::format("vocabulary", "header", "missing reserved tokens"));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::format("vocabulary", format!("id {i}"), format!("duplicate token `{t}`")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    /// Word ids without EOS or truncation.
    pub fn word_ids(&self, text: &str) -> Vec<u32> {
        normalize_words(text).iter().map(|w| self.id(w)).collect()
    }

    /// Word ids truncated to `context_limit - 1`, followed by EOS.
    pub fn tokenize(&self, text: &str, context_limit: usize) -> Result<Vec<u32>> {
        let mut ids = self.word_ids(text);
        if ids.is_empty() {
            return Err(Error::EmptyText);
        }
        ids.truncate(context_limit.saturating_sub(1));
        ids.push(EOS);
        Ok(ids)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.tokens).expect("strings serialize")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = serde_json::from_str(&text)
            .map_err(|e| Error::format(path.display().to_string(), format!("line {}", e.line()), e.to_string()))?;
        Self::from_tokens(tokens)
    }
}
