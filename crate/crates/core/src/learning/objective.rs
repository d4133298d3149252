use std::collections::BTreeSet;

use rayon::prelude::*;

use super::loss::{order_loss_grad, ranking_loss_grad, LossConfig};
use super::similarity::{dot, normalized_rows, similarity_matrix, softmax_weights, ClassEmbeddingBank};
use crate::encoder::{l2_normalize, EncodedText, EncoderTrace, PromptElement, PromptSequence, TextEncoder};
use crate::error::{Error, Result};
use crate::knowledge::{CategorySet, DescriptionRecord};
use crate::promptgraph::{materialize_prompt, Branch, HandcraftPromptMap, HierarchicalPrompts};

/// Normalized features of one training description. The encoder is frozen,
/// so these are computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatures {
    pub global: Vec<f64>,
    /// Unit token rows, degenerate rows dropped.
    pub tokens: Vec<f64>,
}

impl TextFeatures {
    pub fn from_encoded(enc: &EncodedText) -> Result<Self> {
        let (global, degenerate) = l2_normalize(&enc.global);
        if degenerate {
            return Err(Error::DegenerateFeature("global text feature".into()));
        }
        let tokens = normalized_rows(&enc.tokens, enc.d);
        if tokens.is_empty() {
            return Err(Error::DegenerateFeature("every token feature".into()));
        }
        Ok(Self { global, tokens })
    }
}

/// One description with its positive categories. `index` is its position in
/// the source corpus, reported on numeric failures.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub index: usize,
    pub features: TextFeatures,
    pub positives: BTreeSet<usize>,
}

/// Encodes every record (in parallel, results in input order).
pub fn prepare_examples(encoder: &TextEncoder, records: &[DescriptionRecord]) -> Result<Vec<TrainExample>> {
    records
        .par_iter()
        .enumerate()
        .map(|(index, r)| {
            let enc = encoder.encode_text(&r.text)?;
            Ok(TrainExample {
                index,
                features: TextFeatures::from_encoded(&enc)?,
                positives: r.positives.clone(),
            })
        })
        .collect()
}

/// Gradient rows for both stores, same shapes as the stores.
#[derive(Debug, Clone, PartialEq)]
pub struct GradTable {
    pub global: Vec<f64>,
    pub local: Vec<f64>,
}

impl GradTable {
    pub fn zeros_like(prompts: &HierarchicalPrompts) -> Self {
        Self {
            global: vec![0.0; prompts.global.values().len()],
            local: vec![0.0; prompts.local.values().len()],
        }
    }

    pub fn branch(&self, branch: Branch) -> &[f64] {
        match branch {
            Branch::Global => &self.global,
            Branch::Local => &self.local,
        }
    }

    fn branch_mut(&mut self, branch: Branch) -> &mut [f64] {
        match branch {
            Branch::Global => &mut self.global,
            Branch::Local => &mut self.local,
        }
    }
}

/// Loss components of one batch. Ranking terms are means over records.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchLoss {
    pub rank_global: f64,
    pub rank_local: f64,
    pub order: f64,
    pub total: f64,
}

impl BatchLoss {
    pub fn rank(&self) -> f64 {
        self.rank_global + self.rank_local
    }
}

/// Which loss terms enter the objective. Both by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub rank: bool,
    pub order: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self { rank: true, order: true }
    }
}

/// Encoded class prompts of one branch, kept for the backward pass.
struct BranchForward {
    sequences: Vec<PromptSequence>,
    traces: Vec<EncoderTrace>,
    raw: Vec<Vec<f64>>,
    /// Unit rows, `n × d`.
    unit: Vec<f64>,
}

/// Training objective: frozen encoder, categories and the hand-craft anchor.
pub struct Objective<'a> {
    pub encoder: &'a TextEncoder,
    pub cats: &'a CategorySet,
    pub cfg: LossConfig,
    pub terms: LossTerms,
    /// Hand-craft similarity matrix `D^H`, `n × n`.
    anchor: Vec<f64>,
}

/// Unit-normalized EOS features of the hand-craft prompts, `n × d`.
pub fn handcraft_embeddings(encoder: &TextEncoder, handcraft: &HandcraftPromptMap) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, prompt) in handcraft.render_all().iter().enumerate() {
        let (unit, degenerate) = l2_normalize(&encoder.encode_text(prompt)?.global);
        if degenerate {
            return Err(Error::DegenerateFeature(format!("hand-craft embedding of category {i}")));
        }
        out.extend(unit);
    }
    Ok(out)
}

impl<'a> Objective<'a> {
    pub fn new(
        encoder: &'a TextEncoder,
        cats: &'a CategorySet,
        handcraft: &HandcraftPromptMap,
        cfg: LossConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let h = handcraft_embeddings(encoder, handcraft)?;
        Ok(Self {
            encoder,
            cats,
            cfg,
            terms: LossTerms::default(),
            anchor: similarity_matrix(&h, cats.len(), encoder.d()),
        })
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    fn forward_branch(&self, prompts: &HierarchicalPrompts, branch: Branch) -> Result<BranchForward> {
        let n = self.cats.len();
        let layout = prompts.layout(branch);
        let store = prompts.store(branch);
        let encoded: Vec<(PromptSequence, EncodedText, EncoderTrace)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let seq = materialize_prompt(layout, store, self.cats, i, self.encoder.vocab())?;
                let (enc, trace) = self.encoder.encode_traced(&seq)?;
                Ok((seq, enc, trace))
            })
            .collect::<Result<_>>()?;
        let mut fwd = BranchForward {
            sequences: Vec::with_capacity(n),
            traces: Vec::with_capacity(n),
            raw: Vec::with_capacity(n),
            unit: Vec::with_capacity(n * self.encoder.d()),
        };
        for (i, (seq, enc, trace)) in encoded.into_iter().enumerate() {
            let (unit, degenerate) = l2_normalize(&enc.global);
            if degenerate {
                return Err(Error::DegenerateFeature(format!("{branch:?} class embedding {i}")));
            }
            fwd.sequences.push(seq);
            fwd.traces.push(trace);
            fwd.raw.push(enc.global);
            fwd.unit.extend(unit);
        }
        Ok(fwd)
    }

    /// Class embeddings for the current parameters.
    pub fn bank(&self, prompts: &HierarchicalPrompts) -> Result<ClassEmbeddingBank> {
        let g = self.forward_branch(prompts, Branch::Global)?;
        let l = self.forward_branch(prompts, Branch::Local)?;
        Ok(ClassEmbeddingBank {
            n: self.cats.len(),
            d: self.encoder.d(),
            global: g.unit,
            local: l.unit,
            degenerate: vec![false; self.cats.len()],
        })
    }

    /// Order loss of the current parameters against the anchor, summed over
    /// both branches.
    pub fn order_value(&self, prompts: &HierarchicalPrompts) -> Result<f64> {
        let bank = self.bank(prompts)?;
        let (n, d, tau) = (bank.n, bank.d, self.cfg.tau_order);
        let g = order_loss_grad(&similarity_matrix(&bank.global, n, d), &self.anchor, n, tau).0;
        let l = order_loss_grad(&similarity_matrix(&bank.local, n, d), &self.anchor, n, tau).0;
        Ok(g + l)
    }

    pub fn loss(&self, prompts: &HierarchicalPrompts, batch: &[&TrainExample]) -> Result<BatchLoss> {
        self.evaluate(prompts, batch, false).map(|(l, _)| l)
    }

    /// Mean batch loss and its gradient with respect to every parameter row.
    pub fn loss_and_gradients(
        &self,
        prompts: &HierarchicalPrompts,
        batch: &[&TrainExample],
    ) -> Result<(BatchLoss, GradTable)> {
        self.evaluate(prompts, batch, true)
            .map(|(l, g)| (l, g.expect("gradients requested")))
    }

    fn evaluate(
        &self,
        prompts: &HierarchicalPrompts,
        batch: &[&TrainExample],
        want_grad: bool,
    ) -> Result<(BatchLoss, Option<GradTable>)> {
        if batch.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let (n, d) = (self.cats.len(), self.encoder.d());
        let g = self.forward_branch(prompts, Branch::Global)?;
        let l = self.forward_branch(prompts, Branch::Local)?;
        // Gradients with respect to the unit class embeddings.
        let mut dg = vec![0.0; n * d];
        let mut dl = vec![0.0; n * d];
        let mut out = BatchLoss::default();
        let inv_b = 1.0 / batch.len() as f64;

        if self.terms.rank {
            for ex in batch {
                let t = &ex.features.global;
                let sg: Vec<f64> = (0..n).map(|i| dot(t, &g.unit[i * d..(i + 1) * d])).collect();
                let (lg, grad_sg) = ranking_loss_grad(&sg, &ex.positives, self.cfg.margin)?;

                let tokens = &ex.features.tokens;
                let n_r = tokens.len() / d;
                let mut sl = vec![0.0; n];
                let mut weights = Vec::with_capacity(n);
                for i in 0..n {
                    let li = &l.unit[i * d..(i + 1) * d];
                    let s: Vec<f64> = tokens.chunks_exact(d).map(|tj| dot(li, tj)).collect();
                    let w = softmax_weights(&s, self.cfg.tau_local);
                    sl[i] = dot(&w, &s);
                    weights.push((s, w));
                }
                let (ll, grad_sl) = ranking_loss_grad(&sl, &ex.positives, self.cfg.margin)?;
                if !(lg.is_finite() && ll.is_finite()) {
                    return Err(Error::NonFiniteLoss {
                        record: ex.index,
                        detail: format!("ranking loss global={lg} local={ll}"),
                    });
                }
                out.rank_global += lg * inv_b;
                out.rank_local += ll * inv_b;
                if !want_grad {
                    continue;
                }
                for i in 0..n {
                    if grad_sg[i] != 0.0 {
                        let c = grad_sg[i] * inv_b;
                        for (acc, tk) in dg[i * d..(i + 1) * d].iter_mut().zip(t) {
                            *acc += c * tk;
                        }
                    }
                    if grad_sl[i] != 0.0 {
                        let (s, w) = &weights[i];
                        let row = &mut dl[i * d..(i + 1) * d];
                        for j in 0..n_r {
                            let ds = w[j] * (1.0 + (s[j] - sl[i]) / self.cfg.tau_local);
                            let c = grad_sl[i] * ds * inv_b;
                            for (acc, tk) in row.iter_mut().zip(&tokens[j * d..(j + 1) * d]) {
                                *acc += c * tk;
                            }
                        }
                    }
                }
            }
        }

        if self.terms.order && self.cfg.lambda1 > 0.0 {
            for (fwd, dunit) in [(&g, &mut dg), (&l, &mut dl)] {
                let dm = similarity_matrix(&fwd.unit, n, d);
                let (o, grad_d) = order_loss_grad(&dm, &self.anchor, n, self.cfg.tau_order);
                out.order += o;
                if want_grad {
                    // dE = (dD + dDᵀ) E
                    for i in 0..n {
                        for k in 0..n {
                            let c = self.cfg.lambda1 * (grad_d[i * n + k] + grad_d[k * n + i]);
                            if c == 0.0 {
                                continue;
                            }
                            for t in 0..d {
                                dunit[i * d + t] += c * fwd.unit[k * d + t];
                            }
                        }
                    }
                }
            }
        }
        out.total = out.rank() + self.cfg.lambda1 * out.order;
        if !out.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                record: batch[0].index,
                detail: format!("batch loss {out:?}"),
            });
        }
        if !want_grad {
            return Ok((out, None));
        }

        let mut grads = GradTable::zeros_like(prompts);
        for (fwd, dunit) in [(&g, &dg), (&l, &dl)] {
            let per_class: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let dn = &dunit[i * d..(i + 1) * d];
                    let unit = &fwd.unit[i * d..(i + 1) * d];
                    let norm = dot(&fwd.raw[i], &fwd.raw[i]).sqrt();
                    let proj = dot(unit, dn);
                    let draw: Vec<f64> = dn.iter().zip(unit).map(|(a, u)| (a - u * proj) / norm).collect();
                    self.encoder.backward_global(&fwd.traces[i], &draw)
                })
                .collect();
            // Scatter in fixed category order so the sum is deterministic.
            for (i, dx) in per_class.iter().enumerate() {
                for (t, el) in fwd.sequences[i].elements.iter().enumerate() {
                    if let PromptElement::Continuous { param, .. } = el {
                        let target = &mut grads.branch_mut(param.branch)[param.index * d..(param.index + 1) * d];
                        for (acc, v) in target.iter_mut().zip(&dx[t * d..(t + 1) * d]) {
                            *acc += v;
                        }
                    }
                }
            }
        }
        if let Some(bad) = grads.global.iter().chain(&grads.local).position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss {
                record: batch[0].index,
                detail: format!("non-finite gradient entry {bad}"),
            });
        }
        Ok((out, Some(grads)))
    }
}
