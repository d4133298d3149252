use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Item indices sorted by descending score, ties by ascending index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Non-interpolated average precision of one class.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in ranking(scores).iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

/// Micro F1 when each item predicts its `k` highest-scoring classes.
pub fn f1_at_k(scores: &[Vec<f64>], labels: &[BTreeSet<usize>], k: usize) -> f64 {
    let mut tp = 0usize;
    let mut predicted = 0usize;
    let mut positives = 0usize;
    for (s, l) in scores.iter().zip(labels) {
        let top = ranking(s);
        let top = &top[..k.min(top.len())];
        predicted += top.len();
        tp += top.iter().filter(|c| l.contains(c)).count();
        positives += l.len();
    }
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / predicted as f64;
    let r = tp as f64 / positives as f64;
    2.0 * p * r / (p + r)
}
