//! Hierarchical prompt parameters: slot layout, backing stores, handcrafted
//! prompts and checkpoints.

mod checkpoint;
mod handcraft;
mod layout;
mod store;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use handcraft::{HandcraftPromptMap, DEFAULT_TEMPLATE};
pub use layout::{Band, Branch, ParamRef, PromptLayout, TokenComposition};
pub use store::{materialize_prompt, ParameterStore};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::knowledge::SubgroupPartition;

/// Standard deviation of the initial prompt vectors.
pub const DEFAULT_INIT_SIGMA: f64 = 0.02;

/// Offset mixed into the seed of the local branch so the two branches start
/// from different draws.
const LOCAL_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

/// Global and local prompt branches, each with its own layout and store.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalPrompts {
    pub global_layout: PromptLayout,
    pub local_layout: PromptLayout,
    pub global: ParameterStore,
    pub local: ParameterStore,
    pub seeds: (u64, u64),
}

impl HierarchicalPrompts {
    pub fn new(
        partition: &SubgroupPartition,
        composition: TokenComposition,
        n_categories: usize,
        d: usize,
        seed: u64,
        sigma: f64,
    ) -> Result<Self> {
        let m = composition.total();
        let global_layout = PromptLayout::build(partition, composition, m, n_categories, Branch::Global)?;
        let local_layout = PromptLayout::build(partition, composition, m, n_categories, Branch::Local)?;
        let seeds = (seed, seed ^ LOCAL_SEED_OFFSET);
        let mut global = ParameterStore::for_layout(&global_layout, d);
        global.init_parameters(seeds.0, sigma);
        let mut local = ParameterStore::for_layout(&local_layout, d);
        local.init_parameters(seeds.1, sigma);
        Ok(Self {
            global_layout,
            local_layout,
            global,
            local,
            seeds,
        })
    }

    pub fn layout(&self, branch: Branch) -> &PromptLayout {
        match branch {
            Branch::Global => &self.global_layout,
            Branch::Local => &self.local_layout,
        }
    }

    pub fn store(&self, branch: Branch) -> &ParameterStore {
        match branch {
            Branch::Global => &self.global,
            Branch::Local => &self.local,
        }
    }

    pub fn store_mut(&mut self, branch: Branch) -> &mut ParameterStore {
        match branch {
            Branch::Global => &mut self.global,
            Branch::Local => &mut self.local,
        }
    }

    pub fn n_categories(&self) -> usize {
        self.global_layout.n_categories()
    }
}

/// Which prompts score the categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    /// Fixed natural-language prompts, no training.
    Handcraft,
    /// Every learnable token shared by all categories.
    Shared,
    /// Every learnable token specific to its category.
    Specific,
    /// Shared, partially shared and specific tokens.
    Hierarchical,
}

impl PromptKind {
    /// Token composition for `m` learnable tokens; `None` for hand-craft.
    pub fn composition(self, m: usize) -> Option<TokenComposition> {
        match self {
            PromptKind::Handcraft => None,
            PromptKind::Shared => Some(TokenComposition::shared_only(m)),
            PromptKind::Specific => Some(TokenComposition::specific_only(m)),
            PromptKind::Hierarchical => Some(TokenComposition::default()),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PromptKind::Handcraft => "Hand-craft",
            PromptKind::Shared => "Shared",
            PromptKind::Specific => "Category-specific",
            PromptKind::Hierarchical => "Hierarchical",
        }
    }
}
