//! Knowledge acquisition: question templates, LLM clients, answer parsing
//! and the description corpora that training consumes.
//!
//! Category knowledge comes from five question families. Attribute
//! questions collect common and category-specific attributes, a filter
//! question removes noisy ones, description questions turn each
//! (category, attribute) pair into sentences, and partition and scene
//! questions produce co-occurrence groups and multi-label relationship
//! sentences.

mod acquire;
mod captions;
mod client;
mod corpus;
mod mock;
mod questions;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use acquire::{
    acquire_attributes, acquire_descriptions, acquire_relationship_descriptions,
    filter_attributes, partition_subgroups, run_pipeline, AcquireConfig, Acquired,
};
pub use captions::{ingest_captions, CaptionMatcher};
pub use client::{LiveClient, LiveConfig, LlmClient};
pub use corpus::{load_corpus, save_corpus, Corpus};
pub use mock::MockLlm;
pub use questions::{parse_list_answer, parse_partition_answer, render_question, QuestionTemplate, Slots};

/// Ordered set of category labels. The index of a name is its category id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategorySet {
    names: Vec<String>,
}

impl CategorySet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(|s| s.into().trim().to_string()).collect();
        if names.is_empty() {
            return Err(Error::InvalidArgument("category set is empty".into()));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.is_empty() {
                return Err(Error::InvalidArgument("empty category name".into()));
            }
            if !seen.insert(name.to_lowercase()) {
                return Err(Error::InvalidArgument(format!("duplicate category `{name}`")));
            }
        }
        Ok(Self { names })
    }

    /// Reads one category per line; blank lines and `#` comments are skipped.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Case-insensitive lookup.
    pub fn id_of(&self, name: &str) -> Option<usize> {
        let needle = name.trim().to_lowercase();
        self.names.iter().position(|n| n.to_lowercase() == needle)
    }
}

/// Attributes acquired for a category set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSet {
    pub common: Vec<String>,
    pub specific: BTreeMap<usize, Vec<String>>,
    pub fine: BTreeMap<usize, Vec<String>>,
}

impl AttributeSet {
    /// `common ∪ specific[id]`, deduplicated case-insensitively, in order.
    pub fn candidates(&self, id: usize) -> Vec<String> {
        let specific = self.specific.get(&id).map(Vec::as_slice).unwrap_or(&[]);
        dedup_ci(self.common.iter().chain(specific).cloned())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

pub(crate) fn dedup_ci(items: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = HashSet::new();
    items
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty() && seen.insert(s.to_lowercase()))
        .collect()
}

/// Two-level grouping of categories by likely scene co-occurrence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgroupPartition {
    pub coarse_groups: Vec<Vec<usize>>,
    pub fine_groups: Vec<Vec<usize>>,
    pub ungrouped: Vec<usize>,
}

impl SubgroupPartition {
    /// Every category ungrouped.
    pub fn flat(n: usize) -> Self {
        Self {
            coarse_groups: Vec::new(),
            fine_groups: Vec::new(),
            ungrouped: (0..n).collect(),
        }
    }

    /// Checks disjointness per level, fine-refines-coarse and coverage.
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("invalid partition: {m}")));
        let mut owner = vec![None; n];
        for (g, group) in self.coarse_groups.iter().enumerate() {
            for &id in group {
                if id >= n {
                    return bad(format!("id {id} out of range"));
                }
                if owner[id].replace(g).is_some() {
                    return bad(format!("category {id} in two coarse groups"));
                }
            }
        }
        for &id in &self.ungrouped {
            if id >= n {
                return bad(format!("id {id} out of range"));
            }
            if owner[id].is_some() {
                return bad(format!("category {id} both grouped and ungrouped"));
            }
        }
        let ungrouped: BTreeSet<usize> = self.ungrouped.iter().copied().collect();
        for (id, o) in owner.iter().enumerate() {
            if o.is_none() && !ungrouped.contains(&id) {
                return bad(format!("category {id} not covered"));
            }
        }
        let mut fine_seen = BTreeSet::new();
        for group in &self.fine_groups {
            let parents: BTreeSet<Option<usize>> =
                group.iter().map(|&id| owner.get(id).copied().flatten()).collect();
            if parents.len() != 1 || parents.contains(&None) {
                return bad(format!("fine group {group:?} does not refine one coarse group"));
            }
            for &id in group {
                if !fine_seen.insert(id) {
                    return bad(format!("category {id} in two fine groups"));
                }
            }
        }
        Ok(())
    }

    /// Short stable digest used to tie checkpoints to a partition.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("partition serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptionKind {
    Coarse,
    Fine,
    Relationship,
    Caption,
}

impl DescriptionKind {
    pub const ALL: [DescriptionKind; 4] = [
        DescriptionKind::Coarse,
        DescriptionKind::Fine,
        DescriptionKind::Relationship,
        DescriptionKind::Caption,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DescriptionKind::Coarse => "coarse",
            DescriptionKind::Fine => "fine",
            DescriptionKind::Relationship => "relationship",
            DescriptionKind::Caption => "caption",
        }
    }
}

impl std::str::FromStr for DescriptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DescriptionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown description kind `{s}`")))
    }
}

/// One sentence with its positive label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptionRecord {
    pub text: String,
    pub positives: BTreeSet<usize>,
    pub kind: DescriptionKind,
    pub provenance: String,
}

impl DescriptionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::InvalidArgument("record text is empty".into()));
        }
        if self.positives.is_empty() {
            return Err(Error::EmptyPositives);
        }
        if self.kind == DescriptionKind::Relationship && self.positives.len() < 2 {
            return Err(Error::InvalidArgument(
                "relationship record needs at least two positives".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::format(
            path.display().to_string(),
            format!("line {}", e.line()),
            e.to_string(),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_set_rejects_case_duplicates() {
        assert!(CategorySet::new(["Dog", "dog"]).is_err());
        assert!(CategorySet::new(Vec::<String>::new()).is_err());
        let cats = CategorySet::new(["dog", "Cat"]).unwrap();
        assert_eq!(cats.id_of("cat"), Some(1));
    }

    #[test]
    fn partition_validation() {
        let ok = SubgroupPartition {
            coarse_groups: vec![vec![0, 1, 2], vec![3]],
            fine_groups: vec![vec![0, 1]],
            ungrouped: vec![4],
        };
        ok.validate(5).unwrap();

        let mut overlap = ok.clone();
        overlap.coarse_groups[1].push(2);
        assert!(overlap.validate(5).is_err());

        let mut straddle = ok.clone();
        straddle.fine_groups = vec![vec![2, 3]];
        assert!(straddle.validate(5).is_err());

        let mut uncovered = ok.clone();
        uncovered.ungrouped.clear();
        assert!(uncovered.validate(5).is_err());
    }

    #[test]
    fn relationship_records_need_two_positives() {
        let rec = DescriptionRecord {
            text: "a knife near an oven".into(),
            positives: [0].into(),
            kind: DescriptionKind::Relationship,
            provenance: "q".into(),
        };
        assert!(rec.validate().is_err());
    }
}
