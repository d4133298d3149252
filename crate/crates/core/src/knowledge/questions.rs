use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slot values keyed by slot name (without brackets).
pub type Slots = BTreeMap<String, String>;

/// The question families posed to the LLM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuestionTemplate {
    /// Attributes common to every category.
    CommonAttributes,
    /// Attributes of a single category.
    SpecificAttributes,
    /// Sentences about a category from the angle of one attribute.
    Describe,
    /// Remove attributes irrelevant to a category.
    Filter,
    /// Group categories by scene co-occurrence.
    Partition,
    /// Sentences for a scene containing two categories.
    Scene,
}

impl QuestionTemplate {
    pub const ALL: [QuestionTemplate; 6] = [
        QuestionTemplate::CommonAttributes,
        QuestionTemplate::SpecificAttributes,
        QuestionTemplate::Describe,
        QuestionTemplate::Filter,
        QuestionTemplate::Partition,
        QuestionTemplate::Scene,
    ];

    pub fn pattern(self) -> &'static str {
        match self {
            QuestionTemplate::CommonAttributes => {
                "[object_lists], please summarize [count] attributes that may be common to the above [n_words] words"
            }
            QuestionTemplate::SpecificAttributes => "please summarize [count] attributes of [category]",
            QuestionTemplate::Describe => {
                "please help me generate [count] different sentences about [category] from the angle of the [attribute]"
            }
            QuestionTemplate::Filter => {
                "[attribute_list], please delete the above attribute words given that are not very relevant to [category]. Finally, [count] attribute words remain"
            }
            QuestionTemplate::Partition => {
                "[category_list], categorize the above words according to possible common occurrences in a scene"
            }
            QuestionTemplate::Scene => {
                "generate [count] different descriptive sentences for a scene containing [category1] and [category2]"
            }
        }
    }

    /// Short identifier used in record provenance.
    pub fn id(self) -> &'static str {
        match self {
            QuestionTemplate::CommonAttributes => "common",
            QuestionTemplate::SpecificAttributes => "specific",
            QuestionTemplate::Describe => "describe",
            QuestionTemplate::Filter => "filter",
            QuestionTemplate::Partition => "partition",
            QuestionTemplate::Scene => "scene",
        }
    }

    fn segments(self) -> Vec<Segment> {
        let mut out = Vec::new();
        let mut rest = self.pattern();
        while let Some(open) = rest.find('[') {
            if open > 0 {
                out.push(Segment::Literal(&rest[..open]));
            }
            let close = rest[open..].find(']').expect("balanced slot") + open;
            out.push(Segment::Slot(&rest[open + 1..close]));
            rest = &rest[close + 1..];
        }
        if !rest.is_empty() {
            out.push(Segment::Literal(rest));
        }
        out
    }

    pub fn slot_names(self) -> Vec<&'static str> {
        self.segments()
            .into_iter()
            .filter_map(|s| match s {
                Segment::Slot(name) => Some(name),
                Segment::Literal(_) => None,
            })
            .collect()
    }

    /// Inverse of rendering: recovers slot values from a rendered question.
    pub fn match_question(self, question: &str) -> Option<Slots> {
        let segments = self.segments();
        let mut slots = Slots::new();
        let mut rest = question.trim();
        let mut pending: Option<&str> = None;
        for seg in segments {
            match seg {
                Segment::Slot(name) => pending = Some(name),
                Segment::Literal(lit) => {
                    let at = match pending.take() {
                        Some(name) => {
                            let at = rest.find(lit)?;
                            slots.insert(name.to_string(), rest[..at].to_string());
                            at
                        }
                        None => {
                            if !rest.starts_with(lit) {
                                return None;
                            }
                            0
                        }
                    };
                    rest = &rest[at + lit.len()..];
                }
            }
        }
        match pending {
            Some(name) => {
                slots.insert(name.to_string(), rest.to_string());
            }
            None if !rest.is_empty() => return None,
            None => {}
        }
        Some(slots)
    }

    /// Identifies which template produced `question`.
    pub fn detect(question: &str) -> Option<(QuestionTemplate, Slots)> {
        QuestionTemplate::ALL
            .into_iter()
            .find_map(|t| t.match_question(question).map(|s| (t, s)))
    }
}

impl fmt::Display for QuestionTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

enum Segment {
    Literal(&'static str),
    Slot(&'static str),
}

/// Substitutes every `[slot]` of the template with its value.
pub fn render_question(template: QuestionTemplate, slots: &Slots) -> Result<String> {
    let mut out = String::new();
    for seg in template.segments() {
        match seg {
            Segment::Literal(lit) => out.push_str(lit),
            Segment::Slot(name) => {
                let value = slots
                    .get(name)
                    .ok_or_else(|| Error::MissingSlot(name.to_string()))?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

/// Length in bytes of a leading enumeration marker such as `1.`, `2)`, `-`,
/// `*` or `•`, including the whitespace that follows it.
fn leading_marker_len(s: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut end = 0;
    if let Some(c) = s.chars().next() {
        if matches!(c, '-' | '*' | '•' | '·' | '–') {
            end = c.len_utf8();
        }
    }
    if end == 0 {
        let digits = bytes.iter().take_while(|b| b.is_ascii_digit()).count();
        if digits > 0 && matches!(bytes.get(digits), Some(b'.') | Some(b')') | Some(b':')) {
            end = digits + 1;
        } else if bytes.first() == Some(&b'(') {
            let inner = bytes[1..].iter().take_while(|b| b.is_ascii_digit()).count();
            if inner > 0 && bytes.get(inner + 1) == Some(&b')') {
                end = inner + 2;
            }
        }
    }
    if end == 0 {
        return None;
    }
    // A marker must be followed by whitespace or end the item.
    match s[end..].chars().next() {
        None => Some(end),
        Some(c) if c.is_whitespace() => Some(end),
        _ => None,
    }
}

const QUOTES: &[char] = &['"', '\'', '“', '”', '‘', '’', '`'];

pub(crate) fn clean_item(line: &str) -> String {
    let mut s = line.trim();
    loop {
        let before = s.len();
        if let Some(n) = leading_marker_len(s) {
            s = s[n..].trim();
        }
        s = s.trim_matches(QUOTES).trim();
        if s.len() == before {
            return s.to_string();
        }
    }
}

/// Splits an LLM list answer into clean items.
pub fn parse_list_answer(answer: &str) -> Result<Vec<String>> {
    let items: Vec<String> = answer
        .lines()
        .map(clean_item)
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err(Error::EmptyAnswer);
    }
    Ok(items)
}

/// Parses grouping answers of the form `Kitchen: knife, oven` (one group
/// per line). Lines without a label are read as a bare comma list.
pub fn parse_partition_answer(answer: &str) -> Result<Vec<Vec<String>>> {
    let groups: Vec<Vec<String>> = parse_list_answer(answer)?
        .iter()
        .map(|line| {
            let members = line.split_once(':').map_or(line.as_str(), |(_, m)| m);
            members
                .split(',')
                .flat_map(|m| m.split(" and "))
                .map(|m| clean_item(m.trim().trim_end_matches('.')))
                .filter(|m| !m.is_empty())
                .collect::<Vec<_>>()
        })
        .filter(|g| !g.is_empty())
        .collect();
    if groups.is_empty() {
        return Err(Error::EmptyAnswer);
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn slots(pairs: &[(&str, &str)]) -> Slots {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn describe_question_text() {
        let q = render_question(
            QuestionTemplate::Describe,
            &slots(&[("category", "dog"), ("attribute", "color"), ("count", "100")]),
        )
        .unwrap();
        assert_eq!(
            q,
            "please help me generate 100 different sentences about dog from the angle of the color"
        );
    }

    #[test]
    fn common_question_mentions_count() {
        let q = render_question(
            QuestionTemplate::CommonAttributes,
            &slots(&[("object_lists", "cat, dog"), ("count", "90"), ("n_words", "2")]),
        )
        .unwrap();
        assert!(q.contains("please summarize 90 attributes"));
        assert!(q.starts_with("cat, dog, "));
    }

    #[test]
    fn missing_slot() {
        let err = render_question(
            QuestionTemplate::Describe,
            &slots(&[("category", "dog"), ("count", "100")]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingSlot(ref s) if s == "attribute"));
    }

    #[test]
    fn rendered_questions_have_no_slot_markers_and_detect_back() {
        for t in QuestionTemplate::ALL {
            let filled: Slots = t
                .slot_names()
                .into_iter()
                .map(|n| (n.to_string(), format!("v_{n}")))
                .collect();
            let q = render_question(t, &filled).unwrap();
            assert!(!q.contains('[') && !q.contains(']'), "{q}");
            let (found, back) = QuestionTemplate::detect(&q).unwrap();
            assert_eq!(found, t);
            assert_eq!(back, filled);
        }
    }

    #[test]
    fn list_answers() {
        assert_eq!(parse_list_answer("1. red\n2. round").unwrap(), ["red", "round"]);
        assert_eq!(
            parse_list_answer("- A dog runs.\n\n- A dog barks.").unwrap(),
            ["A dog runs.", "A dog barks."]
        );
        assert!(matches!(parse_list_answer(""), Err(Error::EmptyAnswer)));
        assert_eq!(parse_list_answer("  \"1.5 liters\"  ").unwrap(), ["1.5 liters"]);
        assert_eq!(parse_list_answer("3D shape").unwrap(), ["3D shape"]);
    }

    #[test]
    fn partition_answers() {
        let groups = parse_partition_answer("1. Kitchen: knife, oven\n2. Living room: sofa and book.").unwrap();
        assert_eq!(groups, vec![vec!["knife", "oven"], vec!["sofa", "book"]]);
    }

    proptest! {
        #[test]
        fn parsed_items_are_clean(lines in proptest::collection::vec("[ \\-*•0-9.)(\"a-z]{0,12}", 0..8)) {
            let answer = lines.join("\n");
            if let Ok(items) = parse_list_answer(&answer) {
                for item in items {
                    prop_assert!(!item.is_empty());
                    prop_assert_eq!(item.trim(), item.as_str());
                    prop_assert!(leading_marker_len(&item).is_none(), "marker left in {:?}", item);
                }
            }
        }
    }
}
