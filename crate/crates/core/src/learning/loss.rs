use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub margin: f64,
    pub lambda1: f64,
    /// Temperature of the row softmax in the order loss.
    pub tau_order: f64,
    /// Temperature of the token pooling in the local branch during training.
    pub tau_local: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            lambda1: 0.2,
            tau_order: 1.0,
            tau_local: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.lambda1 >= 0.0 && self.tau_order > 0.0 && self.tau_local > 0.0) {
            return Err(Error::Config(format!("invalid loss config {self:?}")));
        }
        Ok(())
    }
}

/// Pairwise hinge `Σ_{i∈pos, j∉pos} max(0, m − S_i + S_j)` and its gradient
/// with respect to `scores`.
pub fn ranking_loss_grad(scores: &[f64], positives: &BTreeSet<usize>, margin: f64) -> Result<(f64, Vec<f64>)> {
    if positives.is_empty() {
        return Err(Error::EmptyPositives);
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; scores.len()];
    for &i in positives {
        for j in (0..scores.len()).filter(|j| !positives.contains(j)) {
            let h = margin - scores[i] + scores[j];
            if h > 0.0 {
                loss += h;
                grad[i] -= 1.0;
                grad[j] += 1.0;
            }
        }
    }
    Ok((loss, grad))
}

pub fn ranking_loss(scores: &[f64], positives: &BTreeSet<usize>, margin: f64) -> Result<f64> {
    ranking_loss_grad(scores, positives, margin).map(|(l, _)| l)
}

/// Row-wise log-softmax of an `n × n` matrix at temperature `tau`.
pub fn row_log_softmax(m: &[f64], n: usize, tau: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * n);
    for row in m.chunks_exact(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / tau;
        let lse = max + row.iter().map(|v| (v / tau - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v / tau - lse));
    }
    out
}

/// `(1/n) Σ_r KL(softmax(learned_r/τ) ‖ softmax(anchor_r/τ))` and its
/// gradient with respect to `learned`.
pub fn order_loss_grad(learned: &[f64], anchor: &[f64], n: usize, tau: f64) -> (f64, Vec<f64>) {
    let lp = row_log_softmax(learned, n, tau);
    let lq = row_log_softmax(anchor, n, tau);
    let mut loss = 0.0;
    let mut grad = vec![0.0; n * n];
    for r in 0..n {
        let row = r * n..(r + 1) * n;
        let kl: f64 = row.clone().map(|k| lp[k].exp() * (lp[k] - lq[k])).sum();
        loss += kl;
        for k in row {
            grad[k] = lp[k].exp() * (lp[k] - lq[k] - kl) / (tau * n as f64);
        }
    }
    (loss / n as f64, grad)
}

pub fn order_loss(learned: &[f64], anchor: &[f64], n: usize, tau: f64) -> f64 {
    order_loss_grad(learned, anchor, n, tau).0
}

pub fn total_loss(rank: f64, order: f64, lambda1: f64) -> f64 {
    rank + lambda1 * order
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(ids: &[usize]) -> BTreeSet<usize> {
        ids.iter().copied().collect()
    }

    #[test]
    fn ranking_examples() {
        assert!((ranking_loss(&[0.9, 0.2], &set(&[0]), 1.0).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(ranking_loss(&[0.5, 0.5], &set(&[0]), 1.0).unwrap(), 1.0);
        assert_eq!(ranking_loss(&[1.0, -0.5, -0.2], &set(&[0]), 1.0).unwrap(), 0.0);
        assert!(matches!(ranking_loss(&[0.1], &set(&[]), 1.0), Err(Error::EmptyPositives)));
    }

    /// Naive softmax and KL, no log-space tricks.
    fn kl_oracle(a: &[f64], b: &[f64], n: usize, tau: f64) -> f64 {
        let mut total = 0.0;
        for r in 0..n {
            let pa: Vec<f64> = (0..n).map(|c| (a[r * n + c] / tau).exp()).collect();
            let pb: Vec<f64> = (0..n).map(|c| (b[r * n + c] / tau).exp()).collect();
            let (za, zb): (f64, f64) = (pa.iter().sum(), pb.iter().sum());
            for c in 0..n {
                let (p, q) = (pa[c] / za, pb[c] / zb);
                total += p * (p / q).ln();
            }
        }
        total / n as f64
    }

    #[test]
    fn order_examples() {
        let g = [1.0, 0.0, 0.0, 1.0];
        let h = [1.0, 0.5, 0.5, 1.0];
        assert!((order_loss(&g, &h, 2, 1.0) - kl_oracle(&g, &h, 2, 1.0)).abs() < 1e-12);
        assert_eq!(order_loss(&h, &h, 2, 1.0), 0.0);
    }

    #[test]
    fn order_gradient_matches_differences() {
        let a = [1.0, 0.3, -0.2, 0.3, 1.0, 0.6, -0.2, 0.6, 1.0];
        let b = [1.0, 0.8, 0.7, 0.8, 1.0, 0.75, 0.7, 0.75, 1.0];
        let (_, g) = order_loss_grad(&a, &b, 3, 0.7);
        let h = 1e-6;
        for k in 0..9 {
            let mut p = a;
            p[k] += h;
            let mut m = a;
            m[k] -= h;
            let fd = (order_loss(&p, &b, 3, 0.7) - order_loss(&m, &b, 3, 0.7)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn totals() {
        assert!((total_loss(1.0, 0.5, 0.2) - 1.1).abs() < 1e-15);
        assert_eq!(total_loss(0.7, 3.0, 0.0), 0.7);
        assert_eq!(total_loss(0.0, 0.0, 0.2), 0.0);
        let d = LossConfig::default();
        assert_eq!((d.margin, d.lambda1), (1.0, 0.2));
    }

    proptest! {
        #[test]
        fn ranking_bounds(scores in proptest::collection::vec(-1.0f64..1.0, 2..8), k in 1usize..4) {
            let k = k.min(scores.len() - 1);
            let pos: BTreeSet<usize> = (0..k).collect();
            let l = ranking_loss(&scores, &pos, 1.0).unwrap();
            prop_assert!(l >= 0.0 && l <= (k * (scores.len() - k)) as f64 * 3.0);
        }

        #[test]
        fn order_nonnegative_and_oracle(v in proptest::collection::vec(-1.0f64..1.0, 18)) {
            let (a, b) = v.split_at(9);
            let l = order_loss(a, b, 3, 1.0);
            prop_assert!(l >= 0.0);
            prop_assert!((l - kl_oracle(a, b, 3, 1.0)).abs() < 1e-12);
            // Adding a constant to a row leaves its softmax unchanged.
            let mut shifted = a.to_vec();
            for c in 0..3 {
                shifted[3 + c] += 0.25;
            }
            prop_assert!((order_loss(&shifted, a, 3, 1.0)).abs() < 1e-12);
        }
    }
}
