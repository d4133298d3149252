//! Finite-difference verification of the analytic prompt gradients.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::LossConfig;
use super::objective::{GradTable, LossTerms, Objective, TextFeatures, TrainExample};
use crate::encoder::{EncoderConfig, TextEncoder, Vocabulary};
use crate::error::{Error, Result};
use crate::knowledge::{CategorySet, SubgroupPartition};
use crate::promptgraph::{HandcraftPromptMap, HierarchicalPrompts, TokenComposition};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-6;

/// Max-norm relative error `max|a − n| / max(max|a|, max|n|)`; zero when
/// both vectors vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// A small random problem: categories, partition, encoder, prompts, batch.
pub struct Instance {
    pub cats: CategorySet,
    pub partition: SubgroupPartition,
    pub encoder: TextEncoder,
    pub prompts: HierarchicalPrompts,
    pub batch: Vec<TrainExample>,
}

const WORDS: [&str; 16] = [
    "red", "metal", "sharp", "soft", "round", "bright", "small", "heavy", "wooden", "glass", "smooth", "loud", "cold",
    "flat", "tall", "green",
];

/// Random instance with `N ≤ 5`, `M ≤ 6`, `d ≤ 16`, batch `≤ 4`.
pub fn random_instance(seed: u64) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=5);
    let m = rng.random_range(1..=6);
    let d = rng.random_range(4..=16);
    let b = rng.random_range(1..=4);

    let names: Vec<String> = (0..n).map(|i| format!("class{i}")).collect();
    let cats = CategorySet::new(names.iter())?;

    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let split = rng.random_range(1..=n);
    let mut coarse_groups: Vec<Vec<usize>> = ids[..split].chunks(2.max(split / 2)).map(|c| c.to_vec()).collect();
    coarse_groups.retain(|g| g.len() >= 2);
    let fine_groups: Vec<Vec<usize>> = coarse_groups.iter().filter(|g| g.len() > 2).map(|g| g[..2].to_vec()).collect();
    let grouped: BTreeSet<usize> = coarse_groups.iter().flatten().copied().collect();
    let partition = SubgroupPartition {
        coarse_groups,
        fine_groups,
        ungrouped: (0..n).filter(|i| !grouped.contains(i)).collect(),
    };

    let mut bands = [0usize; 4];
    for _ in 0..m {
        bands[rng.random_range(0..4)] += 1;
    }
    let comp = TokenComposition::new(bands[0], bands[1], bands[2], bands[3]);

    let mut texts: Vec<String> = Vec::new();
    for _ in 0..b {
        let len = rng.random_range(1..=6);
        texts.push((0..len).map(|_| *WORDS.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" "));
    }
    let vocab = Vocabulary::build(
        texts
            .iter()
            .map(String::as_str)
            .chain(names.iter().map(String::as_str))
            .chain(["a photo of a"]),
    );
    let encoder = TextEncoder::new(
        EncoderConfig {
            token_scale: 0.5,
            position_scale: 0.2,
            ..EncoderConfig::new(d, rng.random())
        },
        vocab,
    )?;
    let prompts = HierarchicalPrompts::new(&partition, comp, n, d, rng.random(), 0.5)?;
    let mut batch = Vec::with_capacity(b);
    for (index, text) in texts.iter().enumerate() {
        let k = rng.random_range(1..n);
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        batch.push(TrainExample {
            index,
            features: TextFeatures::from_encoded(&encoder.encode_text(text)?)?,
            positives: all[..k].iter().copied().collect(),
        });
    }
    Ok(Instance {
        cats,
        partition,
        encoder,
        prompts,
        batch,
    })
}

/// Central differences of `objective.loss(..).total` over every parameter entry.
pub fn numeric_gradient(objective: &Objective<'_>, prompts: &HierarchicalPrompts, batch: &[&TrainExample]) -> Result<GradTable> {
    let mut work = prompts.clone();
    let mut out = GradTable::zeros_like(prompts);
    for branch in [crate::promptgraph::Branch::Global, crate::promptgraph::Branch::Local] {
        let len = prompts.store(branch).values().len();
        let mut grad = vec![0.0; len];
        for (k, g) in grad.iter_mut().enumerate() {
            let orig = work.store(branch).values()[k];
            work.store_mut(branch).values_mut()[k] = orig + STEP;
            let plus = objective.loss(&work, batch)?.total;
            work.store_mut(branch).values_mut()[k] = orig - STEP;
            let minus = objective.loss(&work, batch)?.total;
            work.store_mut(branch).values_mut()[k] = orig;
            *g = (plus - minus) / (2.0 * STEP);
        }
        match branch {
            crate::promptgraph::Branch::Global => out.global = grad,
            crate::promptgraph::Branch::Local => out.local = grad,
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Rank,
    Order,
    Total,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Rank, Component::Order, Component::Total];

    fn terms(self) -> LossTerms {
        LossTerms {
            rank: self != Component::Order,
            order: self != Component::Rank,
        }
    }
}

/// Relative error of one component on one instance. With `inject_bug` the
/// analytic local-branch gradient is perturbed, as a negative control.
pub fn check_instance(instance: &Instance, component: Component, inject_bug: bool) -> Result<f64> {
    let handcraft = HandcraftPromptMap::new(&instance.cats);
    let mut objective = Objective::new(&instance.encoder, &instance.cats, &handcraft, LossConfig::default())?;
    objective.terms = component.terms();
    let batch: Vec<&TrainExample> = instance.batch.iter().collect();
    let (_, mut analytic) = objective.loss_and_gradients(&instance.prompts, &batch)?;
    if inject_bug {
        for v in &mut analytic.local {
            *v *= 1.05;
        }
        analytic.global[0] += 1e-3;
    }
    let numeric = numeric_gradient(&objective, &instance.prompts, &batch)?;
    let a: Vec<f64> = analytic.global.iter().chain(&analytic.local).copied().collect();
    let n: Vec<f64> = numeric.global.iter().chain(&numeric.local).copied().collect();
    Ok(relative_error(&a, &n))
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub trials: usize,
    pub max_rank: f64,
    pub max_order: f64,
    pub max_total: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Runs `trials` random instances, each checked for every component.
pub fn run_gradcheck(trials: usize, seed: u64, inject_bug: bool) -> Result<GradcheckReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("gradcheck needs at least one trial".into()));
    }
    let mut worst = [0.0f64; 3];
    for t in 0..trials {
        let instance = random_instance(seed.wrapping_add(t as u64))?;
        for (c, component) in Component::ALL.into_iter().enumerate() {
            let err = check_instance(&instance, component, inject_bug)?;
            worst[c] = worst[c].max(err);
        }
    }
    Ok(GradcheckReport {
        trials,
        max_rank: worst[0],
        max_order: worst[1],
        max_total: worst[2],
        tolerance: TOLERANCE,
        passed: worst.iter().all(|&e| e < TOLERANCE),
    })
}
