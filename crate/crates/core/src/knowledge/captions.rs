use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::corpus::load_corpus;
use super::{CategorySet, DescriptionKind, DescriptionRecord};
use crate::error::{Error, Result};

pub(crate) fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Whole-word category name matcher with plural stripping on the last word.
#[derive(Debug, Clone)]
pub struct CaptionMatcher {
    patterns: Vec<(usize, Vec<String>)>,
}

fn plural_match(word: &str, stem: &str) -> bool {
    if word == stem {
        return true;
    }
    if let Some(base) = word.strip_suffix("ies") {
        if stem.strip_suffix('y') == Some(base) {
            return true;
        }
    }
    word.strip_suffix("es") == Some(stem) || word.strip_suffix('s') == Some(stem)
}

impl CaptionMatcher {
    pub fn new(cats: &CategorySet) -> Self {
        Self::with_synonyms(cats, &BTreeMap::new())
    }

    /// `synonyms` maps a category id to extra names that also count as a match.
    pub fn with_synonyms(cats: &CategorySet, synonyms: &BTreeMap<usize, Vec<String>>) -> Self {
        let mut patterns = Vec::new();
        for (id, name) in cats.names().iter().enumerate() {
            patterns.push((id, words(name)));
            for syn in synonyms.get(&id).into_iter().flatten() {
                patterns.push((id, words(syn)));
            }
        }
        patterns.retain(|(_, p)| !p.is_empty());
        Self { patterns }
    }

    pub fn match_text(&self, text: &str) -> BTreeSet<usize> {
        let ws = words(text);
        let mut found = BTreeSet::new();
        for (id, pattern) in &self.patterns {
            if pattern.len() > ws.len() {
                continue;
            }
            let last = pattern.len() - 1;
            let hit = ws.windows(pattern.len()).any(|win| {
                win[..last] == pattern[..last] && plural_match(&win[last], &pattern[last])
            });
            if hit {
                found.insert(*id);
            }
        }
        found
    }
}

/// Reads captions (plain text, one per line, or corpus JSONL) and labels each
/// with the categories it names. Captions naming no category are skipped.
pub fn ingest_captions(path: impl AsRef<Path>, matcher: &CaptionMatcher) -> Result<Vec<DescriptionRecord>> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_jsonl = raw
        .lines()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.trim_start().starts_with('{'));
    let texts: Vec<(usize, String)> = if is_jsonl {
        load_corpus(path)?
            .records
            .into_iter()
            .enumerate()
            .map(|(i, r)| (i + 1, r.text))
            .collect()
    } else {
        raw.lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim().to_string()))
            .filter(|(_, l)| !l.is_empty())
            .collect()
    };
    let source = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut skipped = 0usize;
    let mut records = Vec::new();
    for (line, text) in texts {
        let positives = matcher.match_text(&text);
        if positives.is_empty() {
            skipped += 1;
            continue;
        }
        records.push(DescriptionRecord {
            text,
            positives,
            kind: DescriptionKind::Caption,
            provenance: format!("caption:{source}:{line}"),
        });
    }
    if skipped > 0 {
        log::info!("skipped {skipped} captions that name no category");
    }
    Ok(records)
}
