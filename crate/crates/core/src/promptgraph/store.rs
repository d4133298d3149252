use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layout::{Branch, ParamRef, PromptLayout};
use crate::encoder::{PromptElement, PromptSequence, Vocabulary, EOS};
use crate::error::{Error, Result};
use crate::knowledge::CategorySet;

/// Backing table of learnable token vectors for one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    branch: Branch,
    d: usize,
    rows: Vec<f64>,
}

impl ParameterStore {
    pub fn zeros(branch: Branch, n_params: usize, d: usize) -> Self {
        Self {
            branch,
            d,
            rows: vec![0.0; n_params * d],
        }
    }

    pub fn for_layout(layout: &PromptLayout, d: usize) -> Self {
        Self::zeros(layout.branch(), layout.n_params(), d)
    }

    pub fn from_values(branch: Branch, d: usize, rows: Vec<f64>) -> Result<Self> {
        if d == 0 || !rows.len().is_multiple_of(d) {
            return Err(Error::InvalidArgument("store payload is not a multiple of d".into()));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("parameter store".into()));
        }
        Ok(Self { branch, d, rows })
    }

    /// I.i.d. `N(0, sigma²)` entries, deterministic per seed.
    pub fn init_parameters(&mut self, seed: u64, sigma: f64) {
        if sigma == 0.0 {
            self.rows.fill(0.0);
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        for v in &mut self.rows {
            *v = normal.sample(&mut rng);
        }
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_params(&self) -> usize {
        self.rows.len() / self.d
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.rows[id * self.d..(id + 1) * self.d]
    }

    pub fn row_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.rows[id * self.d..(id + 1) * self.d]
    }

    pub fn values(&self) -> &[f64] {
        &self.rows
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.rows
    }
}

/// Prompt for one category: its M learnable vectors, then the name tokens, then EOS.
pub fn materialize_prompt(
    layout: &PromptLayout,
    store: &ParameterStore,
    cats: &CategorySet,
    category: usize,
    vocab: &Vocabulary,
) -> Result<PromptSequence> {
    if category >= layout.n_categories() || category >= cats.len() {
        return Err(Error::UnknownCategory(category.to_string()));
    }
    let mut elements: Vec<PromptElement> = layout
        .row(category)
        .iter()
        .map(|&id| PromptElement::Continuous {
            vector: store.row(id).to_vec(),
            param: ParamRef {
                branch: store.branch(),
                index: id,
            },
        })
        .collect();
    elements.extend(vocab.word_ids(cats.name(category)).into_iter().map(PromptElement::Token));
    elements.push(PromptElement::Token(EOS));
    Ok(PromptSequence { elements })
}
