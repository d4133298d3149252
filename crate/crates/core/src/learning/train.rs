use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{GradTable, Objective, TrainExample};
use crate::error::{Error, Result};
use crate::promptgraph::HierarchicalPrompts;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            milestones: vec![2, 5],
            gamma: 0.1,
            epochs: 10,
            batch_size: 8,
            seed: 0,
            optimizer: OptimizerKind::SgdMomentum,
            momentum: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let increasing = self.milestones.windows(2).all(|w| w[0] < w[1]);
        let in_range = self.milestones.iter().all(|&m| m < self.epochs.max(1));
        if !(self.lr > 0.0) || !increasing || !in_range || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

/// `lr · gamma^(number of milestones ≤ epoch)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let passed = cfg.milestones.iter().filter(|&&m| m <= epoch).count();
    cfg.lr * cfg.gamma.powi(passed as i32)
}

/// SGD with optional heavy-ball momentum: `v ← μv + g`, `p ← p − lr·v`.
#[derive(Debug, Clone)]
pub struct Optimizer {
    momentum: f64,
    velocity: Option<GradTable>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            momentum: match cfg.optimizer {
                OptimizerKind::Sgd => 0.0,
                OptimizerKind::SgdMomentum => cfg.momentum,
            },
            velocity: None,
        }
    }

    pub fn step(&mut self, prompts: &mut HierarchicalPrompts, grads: &GradTable, lr: f64) {
        let v = self.velocity.get_or_insert_with(|| GradTable::zeros_like(prompts));
        for (vel, g, p) in [
            (&mut v.global, &grads.global, prompts.global.values_mut()),
            (&mut v.local, &grads.local, prompts.local.values_mut()),
        ] {
            for ((vi, gi), pi) in vel.iter_mut().zip(g).zip(p.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                *pi -= lr * *vi;
            }
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_rank_loss: f64,
    pub mean_order_loss: f64,
    pub mean_total: f64,
}

/// Runs `cfg.epochs` epochs of shuffled mini-batch training. Only the prompt
/// stores change. `on_epoch` sees each log line as it is produced.
pub fn fit(
    objective: &Objective<'_>,
    prompts: &mut HierarchicalPrompts,
    examples: &[TrainExample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut optimizer = Optimizer::new(cfg);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut rng);
        let (mut rank, mut ord, mut total) = (0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, grads) = objective.loss_and_gradients(prompts, &batch)?;
            optimizer.step(prompts, &grads, lr);
            let w = batch.len() as f64;
            rank += loss.rank() * w;
            ord += loss.order;
            total += loss.total * w;
            batches += 1;
        }
        let n = examples.len() as f64;
        let log = EpochLog {
            epoch,
            lr,
            mean_rank_loss: rank / n,
            mean_order_loss: ord / batches as f64,
            mean_total: total / n,
        };
        log::info!(
            "epoch {epoch} lr {lr:.6} rank {:.4} order {:.5} total {:.4}",
            log.mean_rank_loss,
            log.mean_order_loss,
            log.mean_total
        );
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}
