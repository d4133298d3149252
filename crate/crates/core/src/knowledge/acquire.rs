use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::captions::CaptionMatcher;
use super::client::LlmClient;
use super::questions::{parse_list_answer, parse_partition_answer, render_question, QuestionTemplate, Slots};
use super::{dedup_ci, AttributeSet, CategorySet, DescriptionKind, DescriptionRecord, SubgroupPartition};
use crate::error::{Error, Result};

/// Requested answer sizes. These are targets: shortfalls only warn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquireConfig {
    pub n_common: usize,
    pub n_specific: usize,
    pub fine_keep: usize,
    pub per_attribute: usize,
    pub per_pair: usize,
    /// Cap on attributes described per category for coarse descriptions.
    pub coarse_attributes: Option<usize>,
    /// Cap on filtered attributes described per category for fine descriptions.
    pub fine_attributes: Option<usize>,
    pub kinds: Vec<DescriptionKind>,
    /// Add categories named in a sentence to its positives.
    pub augment_name_match: bool,
}

impl Default for AcquireConfig {
    fn default() -> Self {
        Self {
            n_common: 90,
            n_specific: 30,
            fine_keep: 70,
            per_attribute: 100,
            per_pair: 100,
            coarse_attributes: None,
            fine_attributes: None,
            kinds: vec![DescriptionKind::Fine, DescriptionKind::Relationship],
            augment_name_match: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Acquired {
    pub attributes: AttributeSet,
    pub partition: SubgroupPartition,
    pub corpora: BTreeMap<DescriptionKind, Vec<DescriptionRecord>>,
}

fn slots(pairs: &[(&str, String)]) -> Slots {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn take_with_warning(mut items: Vec<String>, target: usize, what: &str) -> Vec<String> {
    if items.len() < target {
        log::warn!("{what}: requested {target}, LLM delivered {}", items.len());
    }
    items.truncate(target);
    items
}

/// Common attributes for all categories plus specific attributes per category.
pub fn acquire_attributes(
    client: &dyn LlmClient,
    cats: &CategorySet,
    n_common: usize,
    n_specific: usize,
) -> Result<AttributeSet> {
    if n_common == 0 || n_specific == 0 {
        return Err(Error::InvalidArgument("attribute counts must be positive".into()));
    }
    let common_q = render_question(
        QuestionTemplate::CommonAttributes,
        &slots(&[
            ("object_lists", cats.names().join(", ")),
            ("count", n_common.to_string()),
            ("n_words", cats.len().to_string()),
        ]),
    )?;
    let mut questions = vec![common_q];
    for name in cats.names() {
        questions.push(render_question(
            QuestionTemplate::SpecificAttributes,
            &slots(&[("count", n_specific.to_string()), ("category", name.clone())]),
        )?);
    }
    let answers = client.ask_many(&questions)?;
    let common = take_with_warning(
        dedup_ci(parse_list_answer(&answers[0])?),
        n_common,
        "common attributes",
    );
    let mut specific = BTreeMap::new();
    for (id, answer) in answers[1..].iter().enumerate() {
        let items = dedup_ci(parse_list_answer(answer)?);
        let what = format!("attributes of {}", cats.name(id));
        specific.insert(id, take_with_warning(items, n_specific, &what));
    }
    Ok(AttributeSet {
        common,
        specific,
        fine: BTreeMap::new(),
    })
}

fn filter_question(cats: &CategorySet, cat_id: usize, candidates: &[String], keep: usize) -> Result<String> {
    render_question(
        QuestionTemplate::Filter,
        &slots(&[
            ("attribute_list", candidates.join(", ")),
            ("category", cats.name(cat_id).to_string()),
            ("count", keep.to_string()),
        ]),
    )
}

fn apply_filter_answer(candidates: &[String], answer: &str, keep: usize) -> Result<Vec<String>> {
    let parsed = match parse_list_answer(answer) {
        Ok(items) => dedup_ci(items),
        Err(Error::EmptyAnswer) => Vec::new(),
        Err(e) => return Err(e),
    };
    if parsed.is_empty() {
        log::warn!("filter question removed every attribute");
        return Ok(parsed);
    }
    let allowed: HashSet<String> = candidates.iter().map(|c| c.to_lowercase()).collect();
    let kept: Vec<String> = parsed
        .iter()
        .filter(|p| allowed.contains(&p.to_lowercase()))
        .cloned()
        .collect();
    if kept.len() * 2 < parsed.len() {
        return Err(Error::UnparseableAnswer(format!(
            "only {} of {} filtered attributes come from the candidate list",
            kept.len(),
            parsed.len()
        )));
    }
    let mut kept = kept;
    kept.truncate(keep);
    Ok(kept)
}

/// Removes noisy attributes for one category; the result is stored in
/// `attrs.fine[cat_id]` and returned.
pub fn filter_attributes(
    client: &dyn LlmClient,
    cats: &CategorySet,
    cat_id: usize,
    attrs: &mut AttributeSet,
    keep: usize,
) -> Result<Vec<String>> {
    if cat_id >= cats.len() {
        return Err(Error::UnknownCategory(cat_id.to_string()));
    }
    let candidates = attrs.candidates(cat_id);
    if candidates.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no candidate attributes for {}",
            cats.name(cat_id)
        )));
    }
    let answer = client.ask(&filter_question(cats, cat_id, &candidates, keep)?)?;
    let fine = apply_filter_answer(&candidates, &answer, keep)?;
    attrs.fine.insert(cat_id, fine.clone());
    Ok(fine)
}

/// Sentences about one category, `per_attribute` per attribute.
pub fn acquire_descriptions(
    client: &dyn LlmClient,
    cats: &CategorySet,
    cat_id: usize,
    attributes: &[String],
    per_attribute: usize,
    kind: DescriptionKind,
) -> Result<Vec<DescriptionRecord>> {
    if !matches!(kind, DescriptionKind::Coarse | DescriptionKind::Fine) {
        return Err(Error::InvalidArgument(format!(
            "attribute descriptions are coarse or fine, not {}",
            kind.as_str()
        )));
    }
    if attributes.is_empty() {
        return Err(Error::InvalidArgument("no attributes to describe".into()));
    }
    let name = cats.name(cat_id);
    let questions = attributes
        .iter()
        .map(|a| {
            render_question(
                QuestionTemplate::Describe,
                &slots(&[
                    ("count", per_attribute.to_string()),
                    ("category", name.to_string()),
                    ("attribute", a.clone()),
                ]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let answers = client.ask_many(&questions)?;
    let mut records = Vec::new();
    for (attribute, answer) in attributes.iter().zip(&answers) {
        let what = format!("sentences about {name} / {attribute}");
        for text in take_with_warning(parse_list_answer(answer)?, per_attribute, &what) {
            records.push(DescriptionRecord {
                text,
                positives: BTreeSet::from([cat_id]),
                kind,
                provenance: format!("{}:{name}:{attribute}", QuestionTemplate::Describe.id()),
            });
        }
    }
    Ok(records)
}

fn ids_from_names(cats: &CategorySet, names: &[String], allowed: &BTreeSet<usize>, taken: &mut BTreeSet<usize>) -> Vec<usize> {
    let mut ids = Vec::new();
    for name in names {
        match cats.id_of(name) {
            Some(id) if allowed.contains(&id) && taken.insert(id) => ids.push(id),
            Some(id) if allowed.contains(&id) => {
                log::warn!("category `{name}` assigned twice; keeping first group")
            }
            _ => log::warn!("dropping `{name}` from grouping answer: not a requested category"),
        }
    }
    ids
}

fn partition_question(cats: &CategorySet, ids: &[usize]) -> Result<String> {
    let list: Vec<&str> = ids.iter().map(|&i| cats.name(i)).collect();
    render_question(
        QuestionTemplate::Partition,
        &slots(&[("category_list", list.join(", "))]),
    )
}

/// Coarse scene groups from one question over all categories, then fine
/// groups from one question per coarse group.
pub fn partition_subgroups(client: &dyn LlmClient, cats: &CategorySet) -> Result<SubgroupPartition> {
    if cats.len() < 2 {
        return Err(Error::InvalidArgument("partition needs at least two categories".into()));
    }
    let all: Vec<usize> = (0..cats.len()).collect();
    let answer = client.ask(&partition_question(cats, &all)?)?;
    let allowed: BTreeSet<usize> = all.iter().copied().collect();
    let mut taken = BTreeSet::new();
    let coarse_groups: Vec<Vec<usize>> = parse_partition_answer(&answer)?
        .iter()
        .map(|names| ids_from_names(cats, names, &allowed, &mut taken))
        .filter(|g| !g.is_empty())
        .collect();

    let splittable: Vec<&Vec<usize>> = coarse_groups.iter().filter(|g| g.len() >= 2).collect();
    let questions = splittable
        .iter()
        .map(|g| partition_question(cats, g))
        .collect::<Result<Vec<_>>>()?;
    let answers = client.ask_many(&questions)?;
    let mut fine_groups = Vec::new();
    for (group, answer) in splittable.iter().zip(&answers) {
        let allowed: BTreeSet<usize> = group.iter().copied().collect();
        let mut taken = BTreeSet::new();
        for names in parse_partition_answer(answer)? {
            let ids = ids_from_names(cats, &names, &allowed, &mut taken);
            if !ids.is_empty() {
                fine_groups.push(ids);
            }
        }
    }
    let ungrouped = all.into_iter().filter(|i| !taken.contains(i)).collect();
    let partition = SubgroupPartition {
        coarse_groups,
        fine_groups,
        ungrouped,
    };
    partition.validate(cats.len())?;
    Ok(partition)
}

/// Scene sentences for every unordered pair inside each fine group.
pub fn acquire_relationship_descriptions(
    client: &dyn LlmClient,
    cats: &CategorySet,
    partition: &SubgroupPartition,
    per_pair: usize,
) -> Result<Vec<DescriptionRecord>> {
    let pairs: Vec<(usize, usize)> = partition
        .fine_groups
        .iter()
        .flat_map(|g| {
            g.iter()
                .enumerate()
                .flat_map(move |(a, &i)| g[a + 1..].iter().map(move |&j| (i, j)))
        })
        .collect();
    if pairs.is_empty() {
        log::warn!("no fine group has two members; no relationship descriptions");
        return Ok(Vec::new());
    }
    let questions = pairs
        .iter()
        .map(|&(i, j)| {
            render_question(
                QuestionTemplate::Scene,
                &slots(&[
                    ("count", per_pair.to_string()),
                    ("category1", cats.name(i).to_string()),
                    ("category2", cats.name(j).to_string()),
                ]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let answers = client.ask_many(&questions)?;
    let mut records = Vec::new();
    for (&(i, j), answer) in pairs.iter().zip(&answers) {
        let what = format!("scene sentences for {} and {}", cats.name(i), cats.name(j));
        for text in take_with_warning(parse_list_answer(answer)?, per_pair, &what) {
            records.push(DescriptionRecord {
                text,
                positives: BTreeSet::from([i, j]),
                kind: DescriptionKind::Relationship,
                provenance: format!(
                    "{}:{}:{}",
                    QuestionTemplate::Scene.id(),
                    cats.name(i),
                    cats.name(j)
                ),
            });
        }
    }
    Ok(records)
}

/// Runs attribute, partition and description acquisition for the
/// requested kinds. Caption corpora are ingested separately.
pub fn run_pipeline(client: &dyn LlmClient, cats: &CategorySet, cfg: &AcquireConfig) -> Result<Acquired> {
    let wants = |k: DescriptionKind| cfg.kinds.contains(&k);
    let mut corpora = BTreeMap::new();
    let mut attributes = AttributeSet::default();

    if wants(DescriptionKind::Coarse) || wants(DescriptionKind::Fine) {
        attributes = acquire_attributes(client, cats, cfg.n_common, cfg.n_specific)?;
        let ids: Vec<usize> = (0..cats.len()).collect();
        let candidates: Vec<Vec<String>> = ids.iter().map(|&i| attributes.candidates(i)).collect();
        let questions = ids
            .iter()
            .map(|&i| filter_question(cats, i, &candidates[i], cfg.fine_keep))
            .collect::<Result<Vec<_>>>()?;
        let answers = client.ask_many(&questions)?;
        for &i in &ids {
            let fine = apply_filter_answer(&candidates[i], &answers[i], cfg.fine_keep)?;
            attributes.fine.insert(i, fine);
        }
        for kind in [DescriptionKind::Coarse, DescriptionKind::Fine] {
            if !wants(kind) {
                continue;
            }
            let mut records = Vec::new();
            for &i in &ids {
                let (mut attrs, cap) = match kind {
                    DescriptionKind::Coarse => (candidates[i].clone(), cfg.coarse_attributes),
                    _ => (attributes.fine[&i].clone(), cfg.fine_attributes),
                };
                if let Some(cap) = cap {
                    attrs.truncate(cap);
                }
                if attrs.is_empty() {
                    log::warn!("no {} attributes for {}", kind.as_str(), cats.name(i));
                    continue;
                }
                records.extend(acquire_descriptions(client, cats, i, &attrs, cfg.per_attribute, kind)?);
            }
            corpora.insert(kind, records);
        }
    }

    let partition = partition_subgroups(client, cats)?;
    if wants(DescriptionKind::Relationship) {
        corpora.insert(
            DescriptionKind::Relationship,
            acquire_relationship_descriptions(client, cats, &partition, cfg.per_pair)?,
        );
    }

    if cfg.augment_name_match {
        let matcher = CaptionMatcher::new(cats);
        for records in corpora.values_mut() {
            for r in records.iter_mut() {
                r.positives.extend(matcher.match_text(&r.text));
            }
        }
    }

    Ok(Acquired {
        attributes,
        partition,
        corpora,
    })
}
