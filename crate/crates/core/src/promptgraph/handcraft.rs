use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoder::Vocabulary;
use crate::error::{Error, Result};
use crate::knowledge::CategorySet;

pub const DEFAULT_TEMPLATE: &str = "a photo of a [category]";

/// Fixed natural-language prompt per category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandcraftPromptMap {
    names: Vec<String>,
    template: String,
    overrides: BTreeMap<String, String>,
}

impl HandcraftPromptMap {
    pub fn new(cats: &CategorySet) -> Self {
        Self {
            names: cats.names().to_vec(),
            template: DEFAULT_TEMPLATE.to_string(),
            overrides: BTreeMap::new(),
        }
    }

    /// Override for one category. `[category]` is substituted if present,
    /// otherwise the text is used verbatim.
    pub fn with_override(mut self, category: &str, prompt: impl Into<String>) -> Result<Self> {
        let key = self.key(category)?;
        self.overrides.insert(key, prompt.into());
        Ok(self)
    }

    fn key(&self, category: &str) -> Result<String> {
        let lc = category.trim().to_lowercase();
        self.names
            .iter()
            .find(|n| n.to_lowercase() == lc)
            .cloned()
            .ok_or_else(|| Error::UnknownCategory(category.to_string()))
    }

    pub fn render(&self, category: &str) -> Result<String> {
        let key = self.key(category)?;
        let template = self.overrides.get(&key).unwrap_or(&self.template);
        Ok(template.replace("[category]", &key))
    }

    /// Prompts for every category in id order.
    pub fn render_all(&self) -> Vec<String> {
        self.names
            .iter()
            .map(|n| self.render(n).expect("own names resolve"))
            .collect()
    }

    /// Vocabulary over category names, these prompts and `texts`. Token
    /// embeddings depend only on the token string, so vocabularies built
    /// from different text sets agree on every token they share.
    pub fn vocabulary<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> Vocabulary {
        let mut all: Vec<String> = texts.into_iter().map(str::to_string).collect();
        all.extend(self.names.iter().cloned());
        all.extend(self.render_all());
        Vocabulary::build(all)
    }
}
