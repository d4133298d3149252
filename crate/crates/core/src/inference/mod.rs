//! Class embedding export, fused scoring, metrics and reports.

mod metrics;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{average_precision, f1_at_k, ranking};

use crate::encoder::{ItemFeatures, TextEncoder};
use crate::error::{Error, Result};
use crate::knowledge::{CategorySet, DescriptionRecord};
use crate::learning::{
    global_similarity, handcraft_embeddings, local_scores, normalized_rows, softmax_pool, ClassEmbeddingBank,
};
use crate::promptgraph::{materialize_prompt, Branch, HandcraftPromptMap, HierarchicalPrompts};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// Weight of the global branch in the fused score.
    pub lambda2: f64,
    /// Temperature of the dense-feature pooling.
    pub tau: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { lambda2: 0.65, tau: 0.01 }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !((0.0..=1.0).contains(&self.lambda2) && self.tau > 0.0) {
            return Err(Error::Config(format!("invalid inference config {self:?}")));
        }
        Ok(())
    }
}

/// Encodes both branches' prompts and normalizes them. Degenerate rows are
/// flagged rather than rejected.
pub fn export_bank(prompts: &HierarchicalPrompts, encoder: &TextEncoder, cats: &CategorySet) -> Result<ClassEmbeddingBank> {
    let n = cats.len();
    let mut raw = [Vec::new(), Vec::new()];
    for (b, branch) in [Branch::Global, Branch::Local].into_iter().enumerate() {
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let seq = materialize_prompt(prompts.layout(branch), prompts.store(branch), cats, i, encoder.vocab())?;
                Ok(encoder.encode(&seq)?.global)
            })
            .collect::<Result<_>>()?;
        raw[b] = rows.concat();
    }
    Ok(ClassEmbeddingBank::from_raw(n, encoder.d(), &raw[0], &raw[1]))
}

/// Zero-shot bank: the hand-craft prompt embedding serves both branches.
pub fn handcraft_bank(encoder: &TextEncoder, handcraft: &HandcraftPromptMap) -> Result<ClassEmbeddingBank> {
    let h = handcraft_embeddings(encoder, handcraft)?;
    let n = h.len() / encoder.d();
    Ok(ClassEmbeddingBank::from_raw(n, encoder.d(), &h, &h))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub fused: Vec<f64>,
    /// Every category, best first; ties by ascending id.
    pub ranked: Vec<(usize, f64)>,
}

impl Prediction {
    pub fn topk(&self, k: usize) -> &[(usize, f64)] {
        &self.ranked[..k.min(self.ranked.len())]
    }
}

/// `λ₂·S^G + (1 − λ₂)·S^L` for one item.
pub fn score(global: &[f64], dense: &[f64], bank: &ClassEmbeddingBank, icfg: &InferenceConfig) -> Result<Prediction> {
    let sg = global_similarity(global, bank)?;
    let rows = normalized_rows(dense, bank.d);
    if rows.is_empty() {
        return Err(Error::DegenerateFeature("every dense feature row".into()));
    }
    let n_r = rows.len() / bank.d;
    let s = local_scores(&rows, bank);
    let fused: Vec<f64> = (0..bank.n)
        .map(|i| {
            let sl = softmax_pool(&s[i * n_r..(i + 1) * n_r], icfg.tau);
            icfg.lambda2 * sg[i] + (1.0 - icfg.lambda2) * sl
        })
        .collect();
    let ranked = ranking(&fused).into_iter().map(|i| (i, fused[i])).collect();
    Ok(Prediction { fused, ranked })
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn score_item(item: &ItemFeatures, bank: &ClassEmbeddingBank, icfg: &InferenceConfig) -> Result<Prediction> {
    score(&widen(&item.global), &widen(&item.dense), bank, icfg)
}

/// One evaluation input with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub label: String,
    pub features: ItemFeatures,
    pub positives: BTreeSet<usize>,
}

/// Text stand-ins: EOS feature as global, token rows as dense features. The
/// features are rounded to `f32`, exactly as a feature file would store them.
pub fn items_from_corpus(encoder: &TextEncoder, records: &[DescriptionRecord]) -> Result<Vec<EvalItem>> {
    records
        .par_iter()
        .map(|r| {
            Ok(EvalItem {
                label: r.text.clone(),
                features: ItemFeatures::from_encoded(&encoder.encode_text(&r.text)?),
                positives: r.positives.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct LabelLine {
    positives: BTreeSet<usize>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    id: Option<String>,
}

/// Reads one `{"positives": [...]}` object per line. Corpus files qualify.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<(Option<String>, BTreeSet<usize>)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: LabelLine = serde_json::from_str(line)
            .map_err(|e| Error::format(path.display().to_string(), format!("line {}", i + 1), e.to_string()))?;
        out.push((l.id.or(l.text), l.positives));
    }
    Ok(out)
}

/// Pairs imported features with labels, in file order.
pub fn items_from_features(
    features: Vec<ItemFeatures>,
    labels: Vec<(Option<String>, BTreeSet<usize>)>,
) -> Result<Vec<EvalItem>> {
    if features.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} feature items but {} label lines",
            features.len(),
            labels.len()
        )));
    }
    Ok(features
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (features, (label, positives)))| EvalItem {
            label: label.unwrap_or_else(|| format!("item {i}")),
            features,
            positives,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "F1_top3")]
    pub f1_top3: f64,
    /// `null` for classes without positives in the evaluation set.
    pub per_class_ap: Vec<Option<f64>>,
    pub n_items: usize,
    pub n_classes_scored: usize,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table.
    pub fn table(&self, cats: &CategorySet) -> String {
        let width = cats.names().iter().map(|n| n.len()).max().unwrap_or(0).max(8);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>7}", "category", "AP");
        for (i, ap) in self.per_class_ap.iter().enumerate() {
            let cell = ap.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v));
            let _ = writeln!(out, "{:<width$}  {:>7}", cats.name(i), cell);
        }
        let _ = writeln!(out, "{:<width$}  {:>7.2}", "mAP", 100.0 * self.map);
        let _ = writeln!(out, "{:<width$}  {:>7.2}", "F1@top3", 100.0 * self.f1_top3);
        out
    }
}

pub fn predict_all(items: &[EvalItem], bank: &ClassEmbeddingBank, icfg: &InferenceConfig) -> Result<Vec<Prediction>> {
    items.par_iter().map(|it| score_item(&it.features, bank, icfg)).collect()
}

pub fn evaluate(items: &[EvalItem], bank: &ClassEmbeddingBank, icfg: &InferenceConfig) -> Result<MetricsReport> {
    icfg.validate()?;
    if items.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let preds = predict_all(items, bank, icfg)?;
    let mut per_class = Vec::with_capacity(bank.n);
    for c in 0..bank.n {
        let scores: Vec<f64> = preds.iter().map(|p| p.fused[c]).collect();
        let labels: Vec<bool> = items.iter().map(|it| it.positives.contains(&c)).collect();
        match average_precision(&scores, &labels) {
            Ok(ap) => per_class.push(Some(ap)),
            Err(Error::NoPositives) => {
                log::warn!("category {c} has no positives in the evaluation set, excluded from mAP");
                per_class.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let scored: Vec<f64> = per_class.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(Error::NoPositives);
    }
    let fused: Vec<Vec<f64>> = preds.into_iter().map(|p| p.fused).collect();
    let labels: Vec<BTreeSet<usize>> = items.iter().map(|it| it.positives.clone()).collect();
    Ok(MetricsReport {
        map: scored.iter().sum::<f64>() / scored.len() as f64,
        f1_top3: f1_at_k(&fused, &labels, 3),
        per_class_ap: per_class,
        n_items: items.len(),
        n_classes_scored: scored.len(),
    })
}

/// Per item: its label, then `k` lines of category and fused score, with `*`
/// marking ground-truth positives.
pub fn topk_report(
    items: &[EvalItem],
    bank: &ClassEmbeddingBank,
    icfg: &InferenceConfig,
    k: usize,
    cats: &CategorySet,
) -> Result<String> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let preds = predict_all(items, bank, icfg)?;
    let mut out = String::new();
    for (item, pred) in items.iter().zip(&preds) {
        let _ = writeln!(out, "{}", item.label);
        for &(c, s) in pred.topk(k) {
            let mark = if item.positives.contains(&c) { '*' } else { ' ' };
            let _ = writeln!(out, "  {mark} {:<20} {s:+.4}", cats.name(c));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank() -> ClassEmbeddingBank {
        let g = [1.0, 0.0, 0.0, 1.0];
        let l = [0.0, 1.0, 1.0, 0.0];
        ClassEmbeddingBank::from_raw(2, 2, &g, &l)
    }

    #[test]
    fn fusion() {
        // S^G = (1, 0), local rows orthogonal to L_0 → S^L_0 = 0.
        let p = score(&[1.0, 0.0], &[1.0, 0.0], &bank(), &InferenceConfig::default()).unwrap();
        assert!((p.fused[0] - 0.65).abs() < 1e-15);
        let only_global = InferenceConfig { lambda2: 1.0, tau: 0.01 };
        let p = score(&[0.6, 0.8], &[1.0, 0.0, 0.0, 1.0], &bank(), &only_global).unwrap();
        assert_eq!(p.fused, global_similarity(&[0.6, 0.8], &bank()).unwrap());
    }

    #[test]
    fn ties_break_by_id() {
        let g = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let b = ClassEmbeddingBank::from_raw(3, 2, &g, &g);
        let p = score(&[1.0, 0.0], &[1.0, 0.0], &b, &InferenceConfig::default()).unwrap();
        assert_eq!(p.ranked.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1, 2]);
        // Positive rescaling keeps the order.
        let scaled: Vec<f64> = p.fused.iter().map(|v| v * 3.5).collect();
        assert_eq!(ranking(&scaled), ranking(&p.fused));
    }

    #[test]
    fn single_item_report() {
        let item = EvalItem {
            label: "x".into(),
            features: ItemFeatures {
                global: vec![1.0, 0.0],
                dense: vec![0.0, 1.0],
                n_dense: 1,
            },
            positives: [0].into_iter().collect(),
        };
        let r = evaluate(std::slice::from_ref(&item), &bank(), &InferenceConfig::default()).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.per_class_ap, vec![Some(1.0), None]);
        assert!(r.f1_top3 > 0.0);
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert!(json.get("mAP").is_some() && json.get("F1_top3").is_some());
        assert!(matches!(evaluate(&[], &bank(), &InferenceConfig::default()), Err(Error::EmptyEvalSet)));

        let cats = CategorySet::new(["a", "b"]).unwrap();
        let text = topk_report(&[item], &bank(), &InferenceConfig::default(), 2, &cats).unwrap();
        assert_eq!(text.lines().count(), 3);
    }
}
