use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge::SubgroupPartition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Global,
    Local,
}

/// Identifies one learnable row: the branch's store and the row index in it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamRef {
    pub branch: Branch,
    pub index: usize,
}

/// How many of the M learnable positions fall into each tying band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenComposition {
    pub shared: usize,
    pub partial_coarse: usize,
    pub partial_fine: usize,
    pub specific: usize,
}

impl TokenComposition {
    pub const fn new(shared: usize, partial_coarse: usize, partial_fine: usize, specific: usize) -> Self {
        Self {
            shared,
            partial_coarse,
            partial_fine,
            specific,
        }
    }

    /// Every position shared by all categories.
    pub const fn shared_only(m: usize) -> Self {
        Self::new(m, 0, 0, 0)
    }

    /// Every position specific to its category.
    pub const fn specific_only(m: usize) -> Self {
        Self::new(0, 0, 0, m)
    }

    pub fn total(&self) -> usize {
        self.shared + self.partial_coarse + self.partial_fine + self.specific
    }
}

impl Default for TokenComposition {
    /// 16 shared, 8 coarse-group, 4 fine-group and 4 category-specific tokens.
    fn default() -> Self {
        Self::new(16, 8, 4, 4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Shared,
    PartialCoarse,
    PartialFine,
    Specific,
}

/// N×M grid of parameter ids: row = category, column = token position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLayout {
    slots: Vec<usize>,
    n_categories: usize,
    composition: TokenComposition,
    branch: Branch,
    n_params: usize,
}

impl PromptLayout {
    /// Columns are banded `[shared | coarse groups | fine groups | specific]`.
    /// Ids are assigned column by column: group members first in group
    /// order, then each remaining category in ascending order.
    pub fn build(
        partition: &SubgroupPartition,
        composition: TokenComposition,
        m: usize,
        n_categories: usize,
        branch: Branch,
    ) -> Result<Self> {
        if composition.total() != m {
            return Err(Error::CompositionMismatch {
                got: composition.total(),
                expected: m,
            });
        }
        if n_categories == 0 {
            return Err(Error::InvalidArgument("layout needs at least one category".into()));
        }
        partition.validate(n_categories)?;
        let mut slots = vec![usize::MAX; n_categories * m];
        let mut next = 0usize;
        let mut fresh = || {
            next += 1;
            next - 1
        };
        let bands = [
            (Band::Shared, composition.shared),
            (Band::PartialCoarse, composition.partial_coarse),
            (Band::PartialFine, composition.partial_fine),
            (Band::Specific, composition.specific),
        ];
        let mut col = 0;
        for (band, width) in bands {
            let groups: &[Vec<usize>] = match band {
                Band::PartialCoarse => &partition.coarse_groups,
                Band::PartialFine => &partition.fine_groups,
                _ => &[],
            };
            for _ in 0..width {
                if band == Band::Shared {
                    let id = fresh();
                    for row in 0..n_categories {
                        slots[row * m + col] = id;
                    }
                } else {
                    for group in groups {
                        let id = fresh();
                        for &row in group {
                            slots[row * m + col] = id;
                        }
                    }
                    for row in 0..n_categories {
                        if slots[row * m + col] == usize::MAX {
                            slots[row * m + col] = fresh();
                        }
                    }
                }
                col += 1;
            }
        }
        Ok(Self {
            slots,
            n_categories,
            composition,
            branch,
            n_params: next,
        })
    }

    pub fn m(&self) -> usize {
        self.composition.total()
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn composition(&self) -> TokenComposition {
        self.composition
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn slot(&self, category: usize, column: usize) -> usize {
        self.slots[category * self.m() + column]
    }

    pub fn row(&self, category: usize) -> &[usize] {
        let m = self.m();
        &self.slots[category * m..(category + 1) * m]
    }

    pub fn band(&self, column: usize) -> Band {
        let c = self.composition;
        if column < c.shared {
            Band::Shared
        } else if column < c.shared + c.partial_coarse {
            Band::PartialCoarse
        } else if column < c.shared + c.partial_coarse + c.partial_fine {
            Band::PartialFine
        } else {
            Band::Specific
        }
    }

    /// Number of (category, column) slots that use each parameter id.
    pub fn use_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_params];
        for &id in &self.slots {
            counts[id] += 1;
        }
        counts
    }
}
